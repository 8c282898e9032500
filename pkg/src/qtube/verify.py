"""Invariant suites for every module, run by ``qtube verify``.

Each check returns ``(ok, detail)``. ``quick=True`` shrinks sample sizes and
sweep lengths (never the tolerances) so the whole battery fits in a short
smoke run; the default sizes are the documented ones.
"""
from __future__ import annotations

import contextlib
import io
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (RateParams, comparison_check, perturbation_risk_check,
                       random_clipped_functions, rate_exponent, variance_check)
from .experiments import (ExperimentConfig, pipeline_error, ridge_baseline_error,
                          run_rate_experiment, sparsity_sweep, power_rate_config)
from .kernel import KernelExpansion, KernelSpec, expansion_eval, gram, kernel_eval, rkhs_norm_sq
from .loss import LossSpec, psi_q_eps, psi_q_eps_subgrad
from .models import (ConditionalModel, conditional_risk_many, noise_certificate, noise_type,
                     sample_dataset, target)
from .solver import (SolverOptions, fit, objective, objective_gradient, optimality_certificate,
                     ridge_coefficients)

__all__ = ["CheckResult", "SUITES", "run_suites"]


@dataclass
class CheckResult:
    suite: str
    name: str
    ok: bool
    detail: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"[{status}] {self.suite}.{self.name}: {self.detail} ({self.seconds:.1f}s)"


def _models():
    return [ConditionalModel("power", 1.0), ConditionalModel("power", 0.5),
            ConditionalModel("gaussian_truncated", 0.1), ConditionalModel("uniform", 0.2),
            ConditionalModel("uniform", 0.5)]


def _loss_samples(rng, n):
    q = rng.choice([1.0, 1.5, 2.0, 3.0], n) * np.where(rng.random(n) < 0.5, 1.0,
                                                       rng.uniform(1, 1.5, n))
    q = np.maximum(q, 1.0)
    eps = rng.uniform(0, 0.5, n) * (rng.random(n) < 0.9)
    return q, eps


def _per_spec(fn, q, eps, *arrays):
    """Evaluate ``fn(spec, *columns)`` row by row with a scalar LossSpec."""
    out = np.empty(len(q))
    for i in range(len(q)):
        out[i] = fn(LossSpec(float(q[i]), float(eps[i])), *(a[i] for a in arrays))
    return out


# -- loss -------------------------------------------------------------------------

def check_sandwich(quick, seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    q, eps = _loss_samples(rng, n)
    u = rng.uniform(-2, 2, n)
    lo = _per_spec(lambda s, x: psi_q_eps(x, s), q, eps, u)
    mid = np.abs(u) ** q
    hi = lo + q * np.abs(u) ** (q - 1) * eps
    bad = int(np.sum(lo > mid + 1e-12) + np.sum(mid > hi + 1e-12))
    return bad == 0, f"{bad} violations in {n} samples"


def check_convexity(quick, seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    q, eps = _loss_samples(rng, n)
    u1, u2, t = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.random(n)
    f = lambda x: _per_spec(lambda s, v: psi_q_eps(v, s), q, eps, x)
    bad = int(np.sum(f(t * u1 + (1 - t) * u2) > t * f(u1) + (1 - t) * f(u2) + 1e-12))
    return bad == 0, f"{bad} violations in {n} samples"


def check_subgradient(quick, seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    q, eps = _loss_samples(rng, n)
    u, v = rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)
    # a tenth of the points sit exactly on a kink
    on = rng.random(n) < 0.1
    u = np.where(on, np.sign(rng.uniform(-1, 1, n)) * eps, u)
    bad = 0
    for i in range(n):
        s = LossSpec(float(q[i]), float(eps[i]))
        lo, hi = psi_q_eps_subgrad(u[i], s)
        fu, fv = float(psi_q_eps(u[i], s)), float(psi_q_eps(v[i], s))
        for g in (lo, hi):
            bad += fv < fu + g * (v[i] - u[i]) - 1e-10
    return bad == 0, f"{bad} violations in {n} samples (both endpoints)"


def check_symmetry(quick, seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    q, eps = _loss_samples(rng, n)
    u = rng.uniform(-2, 2, n)
    a = _per_spec(lambda s, x: psi_q_eps(x, s), q, eps, u)
    b = _per_spec(lambda s, x: psi_q_eps(x, s), q, eps, -u)
    bad = int(np.sum(a != b))
    return bad == 0, f"{bad} inexact pairs in {n} samples"


def check_eps_monotone(quick, seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    q, e1 = _loss_samples(rng, n)
    e2 = e1 + rng.uniform(0, 0.3, n)
    u = rng.uniform(-2, 2, n)
    a = _per_spec(lambda s, x: psi_q_eps(x, s), q, e1, u)
    b = _per_spec(lambda s, x: psi_q_eps(x, s), q, e2, u)
    bad = int(np.sum(a < b))
    return bad == 0, f"{bad} violations in {n} samples"


# -- kernel -----------------------------------------------------------------------

def _kernels():
    return [KernelSpec("gaussian", 0.2), KernelSpec("gaussian", 1.0),
            KernelSpec("polynomial", degree=3, offset=1.0), KernelSpec("linear")]


def check_reproducing(quick, seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in _kernels():
        for _ in range(20):
            x0 = rng.random(2)
            f = KernelExpansion(x0[None, :], [1.0], spec)
            a, b, c = expansion_eval(f, x0), kernel_eval(spec, x0, x0), rkhs_norm_sq(f)
            worst = max(worst, abs(a - b), abs(b - c))
    return worst <= 1e-12, f"max discrepancy {worst:.2e}"


def check_cauchy_schwarz(quick, seed):
    rng = np.random.default_rng(seed)
    bad = 0
    n = 0
    for spec in _kernels():
        for _ in range(50):
            m = int(rng.integers(1, 8))
            f = KernelExpansion(rng.random((m, 2)), rng.normal(size=m), spec)
            for x in rng.random((10, 2)):
                n += 1
                lhs = abs(expansion_eval(f, x))
                rhs = math.sqrt(rkhs_norm_sq(f)) * math.sqrt(kernel_eval(spec, x, x)) + 1e-9
                bad += lhs > rhs
    return bad == 0, f"{bad} violations in {n} evaluations"


def check_gram_psd(quick, seed):
    rng = np.random.default_rng(seed)
    sizes = [2, 16, 128] if quick else [2, 16, 128, 512]
    failures = []
    for spec in _kernels():
        for m in sizes:
            for dim in (1, 3):
                G = gram(spec, rng.random((m, dim)), jitter=1e-10).entries
                try:
                    np.linalg.cholesky(G)
                except np.linalg.LinAlgError:
                    failures.append((spec.kind, m, dim))
    return not failures, f"cholesky failures: {failures}" if failures else "all factorizations succeeded"


# -- models -----------------------------------------------------------------------

def check_noise_certificate(quick, seed):
    margins = {}
    for m in _models():
        margins[f"{m.kind}({m.param})"] = noise_certificate(m, 50, 50, seed)
    worst = min(margins.values())
    return worst >= -1e-8, f"min margin {worst:.2e}"


def check_perturbation(quick, seed):
    rng = np.random.default_rng(seed)
    n_x = 5 if quick else 20
    worst = -math.inf
    for m in _models():
        for q in (1.5, 2.0):
            xs = rng.random((n_x, 1))
            for x in xs:
                t0 = target(m, x, LossSpec(q))
                for eps in (0.01, 0.05, 0.1, 0.25, 0.5):
                    worst = max(worst, abs(target(m, x, LossSpec(q, eps)) - t0) - eps)
    return worst <= 1e-7, f"max |f_eps - f_q| - eps = {worst:.2e}"


def check_uniqueness(quick, seed):
    """Sublevel-set diameter of the conditional risk on a 10^4-point grid.

    Applied for ``eps`` up to half the noise-type radius ``a``. With a wider
    tube the risk is flat around the center: once the support fits inside
    the tube the minimizer is not unique, and before that the risk varies by
    less than the fixed 1e-9 threshold over several grid steps even though
    the minimizer is unique.
    """
    rng = np.random.default_rng(seed)
    grid = np.linspace(-0.5, 0.5, 10_000)
    worst = 0
    n = 0
    for m in _models():
        for q in ((1.5, 3.0) if quick else (1.2, 1.5, 2.0, 3.0)):
            for eps in (0.0, 0.02, 0.05, 0.1, 0.2, 0.25):
                if eps > noise_type(m).a / 2:
                    continue
                x = rng.random((1, 1))
                c = np.full(len(grid), m.center(x)[0])
                C = conditional_risk_many(m, c, grid, LossSpec(q, eps))
                idx = np.flatnonzero(C <= C.min() + 1e-9)
                worst = max(worst, int(idx.max() - idx.min()))
                n += 1
    return worst <= 2, f"max sublevel diameter {worst} grid steps over {n} cases"


def check_first_order(quick, seed):
    from scipy import integrate

    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in _models():
        pdf = m.scalar_pdf()
        hw = m.halfwidth
        for q in (1.5, 2.0, 3.0):
            for eps in (0.0, 0.05, 0.1):
                x = rng.random((1, 1))
                c = float(m.center(x)[0])
                t = target(m, x, LossSpec(q, eps)) - c
                lo, hi = min(t + eps, hw), max(t - eps, -hw)
                kink = [0.0] if m.kink else None
                up = integrate.quad(lambda u: (u - t - eps) ** (q - 1) * pdf(u), lo, hw,
                                    points=kink if kink and lo < 0 < hw else None,
                                    epsabs=1e-12, limit=200)[0]
                dn = integrate.quad(lambda u: (t - eps - u) ** (q - 1) * pdf(u), -hw, hi,
                                    points=kink if kink and -hw < 0 < hi else None,
                                    epsabs=1e-12, limit=200)[0]
                worst = max(worst, abs(up - dn))
    return worst <= 1e-7, f"max imbalance {worst:.2e}"


# -- solver -----------------------------------------------------------------------

def _solver_cases(quick, seed):
    rng = np.random.default_rng(seed)
    model = ConditionalModel("power", 1.0)
    cases = []
    for i in range(4 if quick else 10):
        T = int(rng.integers(8, 40 if quick else 100))
        q = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
        eps = float(rng.choice([0.0, 0.02, 0.1]))
        lam = float(10 ** rng.uniform(-3, -1))
        cases.append((sample_dataset(model, None, T, seed + i), LossSpec(q, eps), lam))
    return cases


def check_optimality(quick, seed):
    kernel = KernelSpec()
    worst, unconverged = 0.0, 0
    for data, spec, lam in _solver_cases(quick, seed):
        opts = SolverOptions()
        res = fit(data, kernel, spec, lam, opts)
        G = gram(kernel, data.xs).entries
        cert = optimality_certificate(G, data.ys, res.coeffs, spec, lam, kink_tol=1e-9)
        worst = max(worst, cert)
        unconverged += not res.converged
    return worst <= SolverOptions().grad_tol, \
        f"max certified gradient {worst:.2e} ({unconverged} fits flagged unconverged)"


def check_dominance(quick, seed):
    kernel = KernelSpec()
    bad = 0
    n = 0
    for data, spec, lam in _solver_cases(quick, seed):
        G = gram(kernel, data.xs).entries
        res = fit(data, kernel, spec, lam)
        F = objective(G, data.ys, res.coeffs, spec, lam)
        bad += F > objective(G, data.ys, np.zeros(len(data)), spec, lam)
        n += 1
        sq = LossSpec(2.0)
        res2 = fit(data, kernel, sq, lam)
        F2 = objective(G, data.ys, res2.coeffs, sq, lam)
        bad += F2 > objective(G, data.ys, ridge_coefficients(G, data.ys, lam), sq, lam) + 1e-9
        n += 1
    return bad == 0, f"{bad} violations in {n} comparisons"


def check_regularization_path(quick, seed):
    kernel = KernelSpec()
    bad = 0
    for data, spec, _ in _solver_cases(quick, seed):
        lams = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
        norms = [fit(data, kernel, spec, lam).rkhs_norm_sq for lam in lams]
        bad += sum(a < b - 1e-8 for a, b in zip(norms, norms[1:]))
    return bad == 0, f"{bad} monotonicity violations"


def check_norm_bound(quick, seed):
    kernel = KernelSpec()
    worst = -math.inf
    for data, spec, lam in _solver_cases(quick, seed):
        G = gram(kernel, data.xs).entries
        res = fit(data, kernel, spec, lam)
        F0 = objective(G, data.ys, np.zeros(len(data)), spec, lam)
        worst = max(worst, res.rkhs_norm_sq - F0 / lam)
    return worst <= 1e-9, f"max excess over objective(0)/lambda {worst:.2e}"


def check_gradient(quick, seed):
    rng = np.random.default_rng(seed)
    kernel = KernelSpec()
    model = ConditionalModel("power", 1.0)
    worst = 0.0
    for i in range(10):
        data = sample_dataset(model, None, 12, seed + i)
        spec = LossSpec(float(rng.choice([1.5, 2.0, 3.0])), float(rng.choice([0.0, 0.05])))
        lam = 0.01
        G = gram(kernel, data.xs).entries
        c = rng.normal(0, 0.5, len(data))
        g = objective_gradient(G, data.ys, c, spec, lam)
        h = 1e-6
        fd = np.array([(objective(G, data.ys, c + h * e, spec, lam)
                        - objective(G, data.ys, c - h * e, spec, lam)) / (2 * h)
                       for e in np.eye(len(c))])
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-12)))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


# -- analysis ---------------------------------------------------------------------

def _ineq_models():
    return [ConditionalModel("power", 1.0), ConditionalModel("uniform", 0.25)]


def check_comparison(quick, seed):
    n_f, n_mc = (8, 20_000) if quick else (25, 200_000)
    bad, n, margin = 0, 0, math.inf
    for m in _ineq_models():
        fs = random_clipped_functions(m, n_f, seed)
        for q in (1.5, 2.0):
            for row in comparison_check(m, q, fs, n_mc, seed):
                n += 1
                bad += not row["ok"]
                margin = min(margin, row["rhs"] + row["slack"] - row["lhs"])
    return bad == 0, f"{bad}/{n} violations, min margin {margin:.3g}"


def check_variance(quick, seed):
    n_f, n_mc = (8, 20_000) if quick else (25, 200_000)
    bad, n, margin = 0, 0, math.inf
    for m in _ineq_models():
        fs = random_clipped_functions(m, n_f, seed)
        for q in (1.5, 2.0):
            for row in variance_check(m, q, fs, n_mc, seed):
                n += 1
                bad += not row["ok"]
                margin = min(margin, row["rhs"] + row["slack"] - row["lhs"])
    return bad == 0, f"{bad}/{n} violations, min margin {margin:.3g}"


def check_excess_transfer(quick, seed):
    n_f, n_mc = (4, 5_000) if quick else (10, 50_000)
    bad, n = 0, 0
    for m in _models():
        fs = random_clipped_functions(m, n_f, seed)
        for q in (1.5, 2.0, 3.0):
            for row in perturbation_risk_check(m, q, fs, [0.01, 0.05, 0.1, 0.25], n_mc, seed):
                n += 1
                bad += not row["ok"]
    return bad == 0, f"{bad}/{n} violations"


def check_rate_calculator(quick, seed):
    rng = np.random.default_rng(seed)
    bad = 0
    n = 0
    for _ in range(300):
        kw = dict(p=math.inf if rng.random() < 0.5 else float(rng.uniform(0.5, 5)),
                  alpha=float(rng.uniform(0.1, 1)), eta=float(rng.uniform(0.1, 2)),
                  beta=float(rng.uniform(0.1, 1)), k=float(rng.choice([0.0, rng.uniform(0, 2)])))
        q, w = float(rng.uniform(1, 3)), float(rng.uniform(0.2, 3))
        a = rate_exponent(RateParams(q=q, w=w, **kw))
        b = rate_exponent(RateParams(q=q, w=w, **kw))
        bad += a != b
        n += 1
        # monotone in w (and q) where every branch of the min is fixed: theta pinned by p
        if kw["k"] == 0:
            for dw in (0.1, 0.5):
                a2 = rate_exponent(RateParams(q=q, w=w + dw, **kw))
                if a2.theta == a.theta:
                    bad += a2.lambda_exp > a.lambda_exp + 1e-15
                    n += 1
                a3 = rate_exponent(RateParams(q=q + dw, w=w, **kw))
                if a3.theta == a.theta:
                    bad += a3.lambda_exp > a.lambda_exp + 1e-15
                    n += 1
    return bad == 0, f"{bad} violations in {n} comparisons"


# -- experiments ------------------------------------------------------------------

def check_determinism(quick, seed):
    cfg = ExperimentConfig(T_grid=[64], repeats=1, seed=seed, n_mc=2048)
    a = run_rate_experiment(cfg)
    b = run_rate_experiment(cfg)
    ok = a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    return ok, "identical report bytes" if ok else "reports differ"


def check_power_rate_slope(quick, seed):
    details = []
    ok = True
    for q in (1.5, 2.0):
        phi = 1.0
        kw = dict(T_grid=[64, 128, 256, 512], repeats=5) if quick else {}
        rep = run_rate_experiment(power_rate_config(q=q, phi=phi, seed=seed, **kw))
        lam = 1 / (2 * (q + phi))
        passed = rep.fitted_slope <= -lam + 0.15
        ok &= passed
        details.append(f"q={q}: slope {rep.fitted_slope:.3f} vs bound {-lam + 0.15:.3f}")
    return ok, "; ".join(details)


def check_sparsity_endpoint(quick, seed):
    model = ConditionalModel("power", 1.0)
    data = sample_dataset(model, None, 64, seed)
    top = float(np.max(np.abs(data.ys)))
    bad = 0
    for q in (1.0, 1.5, 2.0):
        rows = sparsity_sweep(data, KernelSpec(), q, 0.01, [0.0, 0.05, top, top + 0.1], model,
                              n_mc=1024)
        bad += sum(r.ratio != 0 for r in rows if r.eps >= top)
    return bad == 0, f"{bad} nonzero ratios at eps >= max|y|"


def check_baseline(quick, seed):
    model = ConditionalModel("power", 1.0)
    kernel = KernelSpec()
    worst = 0.0
    for i in range(3 if quick else 10):
        T = 64 * (1 + i % 3)
        data = sample_dataset(model, None, T, seed + i)
        lam = T ** (-2 / 3)
        res = fit(data, kernel, LossSpec(2.0), lam)
        mine = pipeline_error(res.coeffs, data, kernel, model, 3.0, 4096, seed)
        ref = ridge_baseline_error(data, kernel, lam, model, 3.0, 4096, seed)
        worst = max(worst, abs(mine - ref))
    return worst <= 1e-6, f"max error difference {worst:.2e}"


# -- cli ---------------------------------------------------------------------------

def check_cli_roundtrip(quick, seed):
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "cfg.json"
        cfg.write_text('{"T_grid": [32, 64, 128], "repeats": 1, "n_mc": 1024}\n', encoding="utf-8")
        outs = []
        for run in ("a", "b"):
            out = Path(tmp) / run
            with contextlib.redirect_stdout(io.StringIO()):
                code = main(["rates", str(cfg), "--out", str(out), "--seed", str(seed)])
            if code != 0:
                return False, f"rates exited with {code}"
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())
                         if p.name != "manifest.json"})
        ok = outs[0] == outs[1] and bool(outs[0])
    return ok, "identical artifacts on rerun" if ok else "artifacts differ on rerun"


SUITES = {
    "loss": [("sandwich", check_sandwich), ("convexity", check_convexity),
             ("subgradient", check_subgradient), ("symmetry", check_symmetry),
             ("eps_monotonicity", check_eps_monotone)],
    "kernel": [("reproducing", check_reproducing), ("cauchy_schwarz", check_cauchy_schwarz),
               ("gram_psd", check_gram_psd)],
    "models": [("noise_certificate", check_noise_certificate),
               ("perturbation", check_perturbation), ("uniqueness", check_uniqueness),
               ("first_order_balance", check_first_order)],
    "solver": [("optimality_certificate", check_optimality), ("objective_dominance", check_dominance),
               ("regularization_path", check_regularization_path), ("norm_bound", check_norm_bound),
               ("gradient_check", check_gradient)],
    "analysis": [("comparison", check_comparison), ("variance_expectation", check_variance),
                 ("excess_risk_transfer", check_excess_transfer),
                 ("rate_calculator", check_rate_calculator)],
    "experiments": [("determinism", check_determinism), ("power_rate_slope", check_power_rate_slope),
                    ("sparsity_endpoint", check_sparsity_endpoint),
                    ("baseline_concordance", check_baseline)],
    "cli": [("roundtrip", check_cli_roundtrip)],
}


def run_suites(suites=None, quick: bool = False, seed: int = 0, echo=print) -> list:
    """Run the named suites (all by default); ``echo`` receives one line per check."""
    names = list(SUITES) if not suites else list(suites)
    unknown = [s for s in names if s not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; choose from {list(SUITES)}")
    results = []
    for suite in names:
        for name, fn in SUITES[suite]:
            t0 = time.perf_counter()
            try:
                ok, detail = fn(quick, seed)
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
            res = CheckResult(suite, name, bool(ok), detail, time.perf_counter() - t0)
            results.append(res)
            if echo:
                echo(res.line())
    return results
