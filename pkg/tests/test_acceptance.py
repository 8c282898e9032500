"""Acceptance criteria, one test per criterion.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantity and its runtime, then asserts the criterion at its stated tolerance
and time budget. Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import grid_search
from qtube.analysis import (RateParams, comparison_check, estimate_Dlambda,
                            random_clipped_functions, rate_exponent, variance_check)
from qtube.experiments import run_rate_experiment, sparsity_sweep, power_rate_config
from qtube.kernel import KernelSpec, gram
from qtube.loss import LossSpec
from qtube.models import ConditionalModel, Design, sample_dataset, target
from qtube.solver import fit, objective, ridge_coefficients
from qtube.verify import check_convexity, check_sandwich, check_subgradient, check_symmetry

INF = math.inf


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail, seconds):
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"\n[{status}] criterion {number} ({title}): {detail} ({seconds:.1f}s)")
    return emit


def test_criterion_1_ridge_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(20):
        T, dim = int(rng.integers(2, 65)), int(rng.integers(1, 4))
        kernel = KernelSpec("gaussian", float(rng.uniform(0.2, 1.0)))
        model = ConditionalModel("uniform", 0.2, dim=dim)
        data = sample_dataset(model, Design(dim), T, seed=i)
        lam = float(10 ** rng.uniform(-3, -1))
        res = fit(data, kernel, LossSpec(2.0), lam)
        ref = ridge_coefficients(gram(kernel, data.xs), data.ys, lam)
        worst = max(worst, float(np.max(np.abs(res.coeffs - ref)) / np.max(np.abs(ref))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 10
    report(1, "ridge oracle", ok, f"max relative deviation {worst:.2e} over 20 datasets", dt)
    assert worst <= 1e-6
    assert dt < 10


def test_criterion_2_brute_force(report):
    t0 = time.perf_counter()
    model, kernel, lam = ConditionalModel("power", 1.0), KernelSpec(), 0.05
    worst = 0.0
    for i in range(10):
        q, eps = (1.0, 1.5, 3.0)[i % 3], (0.0, 0.1)[i % 2]
        data = sample_dataset(model, None, 4, seed=100 + i)
        G = gram(kernel, data.xs).entries
        spec = LossSpec(q, eps)
        res = fit(data, kernel, spec, lam)
        _, F_grid = grid_search(G, data.ys, q, eps, lam, box=1.0, values=True)
        worst = max(worst, abs(objective(G, data.ys, res.coeffs, spec, lam) - F_grid))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 60
    report(2, "brute force", ok, f"max |F_solver - F_grid| {worst:.2e} over 10 instances", dt)
    assert worst <= 1e-5
    assert dt < 60


def test_criterion_3_rate_calculator(report):
    t0 = time.perf_counter()
    bad = []
    # power density schedule, lambda = eps = T^-(q+phi+1)/(2(q+phi))
    for q in (Fraction(3, 2), Fraction(2), Fraction(3)):
        for phi in (Fraction(1, 2), Fraction(1), Fraction(2)):
            a = (q + phi + 1) / (2 * (q + phi))
            res = rate_exponent(RateParams(q=q, w=phi + 1, p=INF, alpha=a, eta=a,
                                           beta=Fraction(1), k=Fraction(0), xi=Fraction(1, 1000)))
            expected = 1 / (2 * (q + phi))
            if not (res.lambda_exp == expected and abs(float(res.lambda_exp - expected)) <= 1e-12):
                bad.append(("power_schedule", q, phi))
    # Lipschitz-type regime: alpha = 1, k = 0, 1 < q <= 2
    rng = np.random.default_rng(0)
    for _ in range(200):
        q = Fraction(int(rng.integers(101, 201)), 100)
        w = Fraction(int(rng.integers(1, 300)), 100)
        beta = Fraction(int(rng.integers(1, 101)), 100)
        eta = INF if rng.random() < 0.2 else Fraction(int(rng.integers(1, 300)), 100)
        p = INF if rng.random() < 0.5 else Fraction(int(rng.integers(10, 500)), 100)
        res = rate_exponent(RateParams(q=q, w=w, p=p, alpha=Fraction(1), eta=eta, beta=beta,
                                       k=Fraction(0)))
        if res.lambda_exp != min(eta, beta, 1 / (2 - res.theta)) / (q + w):
            bad.append(("alpha_one", q, w, beta, eta, p))
    # least squares without tube: O(T^{-1/(2(1+w))}) in L^{2+w}
    for w in (Fraction(1, 20), Fraction(1, 4), Fraction(1), Fraction(3)):
        res = rate_exponent(RateParams(q=Fraction(2), w=w, p=INF, alpha=Fraction(1), eta=INF,
                                       beta=Fraction(1), k=Fraction(0)))
        if res.lambda_exp != 1 / (2 * (1 + w)) or res.r != 2 + w:
            bad.append(("least_squares", w))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 1
    report(3, "rate calculator", ok, f"{len(bad)} mismatches in 213 exact-rational cases", dt)
    assert not bad, bad
    assert dt < 1


def test_criterion_4_perturbation(report):
    t0 = time.perf_counter()
    models = [ConditionalModel("power", 1.0), ConditionalModel("power", 0.5),
              ConditionalModel("gaussian_truncated", 0.1), ConditionalModel("uniform", 0.2),
              ConditionalModel("uniform", 0.5)]
    rng = np.random.default_rng(7)
    worst, n = -INF, 0
    for m in models:
        for j, x in enumerate(rng.random((20, 1))):
            q = (1.0, 1.5, 2.0, 3.0)[j % 4]
            x = x[None, :]
            t0_x = target(m, x, LossSpec(q))
            for eps in (0.01, 0.05, 0.1, 0.25, 0.5):
                worst = max(worst, abs(target(m, x, LossSpec(q, eps)) - t0_x) - eps)
                n += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-7 and dt < 30
    report(4, "perturbation", ok, f"max |f_eps - f_q| - eps = {worst:.2e} over {n} cases", dt)
    assert worst <= 1e-7
    assert dt < 30


INEQ_MODELS = [ConditionalModel("power", 1.0), ConditionalModel("uniform", 0.25)]


def _inequality(check, number, title, report):
    t0 = time.perf_counter()
    bad, n, margin = 0, 0, INF
    for m in INEQ_MODELS:
        fs = random_clipped_functions(m, 25, seed=0)
        for q in (1.5, 2.0):
            for row in check(m, q, fs, n_mc=200_000, seed=0, n_se=5.0):
                n += 1
                bad += not row["ok"]
                margin = min(margin, row["rhs"] + row["slack"] - row["lhs"])
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 120
    report(number, title, ok, f"{bad}/{n} violations, min margin {margin:.3g}", dt)
    assert bad == 0
    assert dt < 120


def test_criterion_5_comparison(report):
    _inequality(comparison_check, 5, "comparison inequality", report)


def test_criterion_6_variance(report):
    _inequality(variance_check, 6, "variance-expectation bound", report)


def test_criterion_7_empirical_rate(report):
    t0 = time.perf_counter()
    cfg = power_rate_config(q=2.0, phi=1.0, seed=0)
    assert cfg.T_grid == [64, 128, 256, 512, 1024, 2048] and cfg.repeats == 20
    rep = run_rate_experiment(cfg)
    bound = -1 / 6 + 0.15
    dt = time.perf_counter() - t0
    ok = rep.fitted_slope <= bound and dt < 15 * 60
    report(7, "empirical rate", ok,
           f"slope {rep.fitted_slope:.3f} +- {rep.slope_stderr:.3f} vs bound {bound:.4f}; "
           f"{len(rep.failures)} flagged cells", dt)
    assert rep.fitted_slope <= bound
    assert dt < 15 * 60


def test_criterion_8_sparsity_endpoints(report):
    t0 = time.perf_counter()
    model, kernel = ConditionalModel("power", 1.0), KernelSpec()
    problems = []
    for seed, q in enumerate((1.0, 1.5, 2.0)):
        data = sample_dataset(model, None, 64, seed)
        top = float(np.max(np.abs(data.ys)))
        rows = sparsity_sweep(data, kernel, q, 0.01, [0.0, top, top + 0.1], model, n_mc=1024)
        res0 = fit(data, kernel, LossSpec(q), 0.01)
        nonzero = float(np.mean(np.abs(res0.residuals) > 1e-7))
        if rows[0].ratio != nonzero:
            problems.append(f"q={q}: ratio {rows[0].ratio} vs nonzero fraction {nonzero}")
        for r in rows[1:]:
            res = fit(data, kernel, LossSpec(q, r.eps), 0.01)
            if r.ratio != 0 or np.any(res.coeffs != 0):
                problems.append(f"q={q}, eps={r.eps}: ratio {r.ratio}")
    lams = [1e-4, 1e-3, 1e-2, 1e-1]
    rep = estimate_Dlambda(kernel, model, None, 2.0, lams, n_quad=1024)
    slack = max(D - lam * rep.fq_norm_sq for lam, D, _ in rep.rows)
    if slack > 1e-12:
        problems.append(f"D(lambda) exceeds lambda ||f_q||^2 by {slack:.2e}")
    dt = time.perf_counter() - t0
    ok = not problems and dt < 60
    report(8, "sparsity endpoints", ok,
           f"{len(problems)} problems; max D - lambda||f_q||^2 = {slack:.2e}", dt)
    assert not problems, problems
    assert dt < 60


def test_criterion_9_loss_properties(report):
    t0 = time.perf_counter()
    results = {name: fn(False, 9) for name, fn in (("sandwich", check_sandwich),
                                                    ("convexity", check_convexity),
                                                    ("subgradient", check_subgradient),
                                                    ("symmetry", check_symmetry))}
    dt = time.perf_counter() - t0
    ok = all(r[0] for r in results.values()) and dt < 5
    report(9, "loss properties", ok, "; ".join(f"{k}: {v[1]}" for k, v in results.items()), dt)
    assert all(r[0] for r in results.values()), results
    assert dt < 5


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
