#!/usr/bin/env python3
"""Empirical learning rate for the power-density model under the power-density schedule.

Fits the q-tube estimator on a grid of sample sizes with lambda = eps = T^-alpha,
then compares the fitted log-log slope of the L^r error with the predicted exponent.

Usage: ``python3 scripts/rate_demo.py [--q 2] [--phi 1] [--repeats 5] [--max-T 1024]``
"""
import argparse

from qtube.experiments import run_rate_experiment, power_rate_config


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--q", type=float, default=2.0)
    ap.add_argument("--phi", type=float, default=1.0)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--max-T", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    T_grid = [T for T in (64, 128, 256, 512, 1024, 2048) if T <= args.max_T]
    cfg = power_rate_config(q=args.q, phi=args.phi, T_grid=T_grid, repeats=args.repeats,
                          seed=args.seed)
    rep = run_rate_experiment(cfg)
    print(rep.to_csv(), end="")
    print(f"fitted slope {rep.fitted_slope:.3f} +- {rep.slope_stderr:.3f}; "
          f"predicted -{float(rep.theoretical_lambda):.4f}")


if __name__ == "__main__":
    main()
