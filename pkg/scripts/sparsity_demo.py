#!/usr/bin/env python3
"""Support-vector ratio and test error as the tube width eps grows.

Usage: ``python3 scripts/sparsity_demo.py [--q 1.5] [--T 200] [--lam 0.01]``
"""
import argparse

import numpy as np

from qtube.experiments import sparsity_sweep
from qtube.kernel import KernelSpec
from qtube.models import ConditionalModel, sample_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--q", type=float, default=1.5)
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--lam", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    model = ConditionalModel("power", 1.0)
    data = sample_dataset(model, None, args.T, args.seed)
    eps_grid = np.linspace(0.0, float(np.max(np.abs(data.ys))) + 0.05, 11)
    print("eps,ratio,objective,error")
    for row in sparsity_sweep(data, KernelSpec(), args.q, args.lam, eps_grid, model, n_mc=4096):
        print(f"{row.eps:.4f},{row.ratio:.4f},{row.objective:.6g},{row.error:.6g}")


if __name__ == "__main__":
    main()
