"""Population quantities, theory constants and the learning-rate exponent.

Integrals over ``x`` are Monte Carlo averages with reported standard errors;
integrals over ``y`` given ``x`` use deterministic quadrature. Excess risks
are always estimated from paired differences on a common ``x`` sample, which
keeps their standard errors proportional to the excess itself.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import KernelExpansion, KernelSpec, as_points, gram, rkhs_norm_sq
from .loss import LossSpec, psi_q, psi_q_eps
from .models import (ConditionalModel, Design, noise_expectation, conditional_risk_many,
                     noise_type)
from .solver import minimize_regularized, project

__all__ = ["MCEstimate", "RateParams", "RateExponent", "generalization_error", "excess_risk",
           "lr_norm", "variance_term", "comparison_constant", "variance_constant", "theta_r",
           "rate_exponent", "estimate_Dlambda", "DLambdaReport", "random_clipped_functions",
           "comparison_check", "variance_check", "perturbation_risk_check"]

INF = math.inf


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float

    def __iter__(self):
        return iter((self.value, self.se))


def _mc(samples: np.ndarray) -> MCEstimate:
    n = len(samples)
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(np.mean(samples)), se)


def _design_sample(design: Design, n_mc: int, seed: int) -> np.ndarray:
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    return design.sample(np.random.default_rng(seed), n_mc)


def generalization_error(f: Callable, model: ConditionalModel, design: Design | None,
                         spec: LossSpec, n_mc: int = 200_000, seed: int = 0) -> MCEstimate:
    """Monte Carlo estimate of the (epsilon-)generalization error of ``f``."""
    X = _design_sample(design or Design(model.dim), n_mc, seed)
    return _mc(conditional_risk_many(model, model.center(X), f(X), spec))


def excess_risk(f: Callable, model: ConditionalModel, design: Design | None, spec: LossSpec,
                n_mc: int = 200_000, seed: int = 0) -> MCEstimate:
    """Paired estimate of ``E(f) - E(f_q)``; ``f_q`` is the model center."""
    X = _design_sample(design or Design(model.dim), n_mc, seed)
    c = model.center(X)
    diff = conditional_risk_many(model, c, f(X), spec) - conditional_risk_many(model, c, c, spec)
    return _mc(diff)


def lr_norm(f: Callable, g: Callable, r: float, design: Design, n_mc: int = 200_000,
            seed: int = 0) -> MCEstimate:
    """``||f - g||`` in ``L^r`` of the design; ``r = inf`` gives the max over the sample.

    The standard error is carried from the mean of ``|f - g|**r`` by the delta method.
    """
    if not r > 0:
        raise ValueError("r must be > 0")
    X = _design_sample(design, n_mc, seed)
    d = np.abs(np.asarray(f(X)) - np.asarray(g(X)))
    if math.isinf(r):
        return MCEstimate(float(d.max()), 0.0)
    m = _mc(d ** r)
    if m.value == 0:
        return MCEstimate(0.0, 0.0)
    val = m.value ** (1.0 / r)
    return MCEstimate(val, m.se * val / (r * m.value))


def variance_term(f: Callable, model: ConditionalModel, design: Design | None, q: float,
                  n_mc: int = 200_000, seed: int = 0) -> MCEstimate:
    """``E[(psi_q(f(x) - y) - psi_q(f_q(x) - y))**2]``."""
    X = _design_sample(design or Design(model.dim), n_mc, seed)
    c = model.center(X)
    s = np.asarray(f(X), float) - c
    zero = np.zeros_like(s)
    cond = noise_expectation(
        model, lambda u, rows: (psi_q(s[rows, None] - u, q) - psi_q(u, q)) ** 2, [s, zero])
    return _mc(cond)


# -- theory constants -------------------------------------------------------------

def theta_r(q, w, p):
    """Variance exponent and comparison norm index for a ``p``-average type ``w``."""
    if math.isinf(p):
        return min(2 / (q + w), 1), q + w
    return min(2 / (q + w), p / (p + 1)), p * (q + w) / (p + 1)


def comparison_constant(q: float, w: float, p: float, bound_norm: float) -> float:
    e = 1.0 / (q + w)
    return 2.0 ** ((q - 1) * e) * q ** (-e) * (q + w) ** e * bound_norm ** e


def variance_constant(C_r: float, r: float, sup_fq: float) -> float:
    """``C_r**2 + 2**(2-r) (1 + sup_fq**(2-r)) C_r**r``.

    ``0**0`` is taken as 1; ``0`` to a negative power is infinite.
    """
    if sup_fq == 0 and r > 2:
        return INF
    return C_r ** 2 + 2.0 ** (2 - r) * (1 + sup_fq ** (2 - r)) * C_r ** r


@dataclass(frozen=True)
class RateParams:
    q: float
    w: float
    p: float = INF
    alpha: float = 1.0
    eta: float = INF
    beta: float = 1.0
    k: float = 0.0
    xi: float = 1e-3

    def __post_init__(self):
        checks = [
            (self.q >= 1, "q >= 1"), (self.w > 0, "w > 0"), (self.p > 0, "p > 0"),
            (0 < self.alpha <= 1, "0 < alpha <= 1"), (self.eta > 0, "eta > 0"),
            (0 < self.beta <= 1, "0 < beta <= 1"), (self.k >= 0, "k >= 0"), (self.xi > 0, "xi > 0"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ValueError("invalid rate parameters: " + ", ".join(bad))


@dataclass(frozen=True)
class RateExponent:
    theta: float
    r: float
    vartheta: float
    lambda_exp: float
    constraint_ok: bool
    flags: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return {k: (float(v) if not isinstance(v, (bool, list)) else v) for k, v in d.items()}


def rate_exponent(params: RateParams) -> RateExponent:
    """Exponent of T in the high-probability L^r learning rate.

    Works with ``fractions.Fraction`` inputs (``p`` and ``eta`` may be
    ``math.inf``), in which case every finite quantity is exact.
    """
    q, w, p, a, eta, b, k, xi = (params.q, params.w, params.p, params.alpha, params.eta,
                                 params.beta, params.k, params.xi)
    theta, r = theta_r(q, w, p)
    vt_terms = [
        (a - eta) / 2,
        a * (1 - b) / 2,
        a / 2 + q * (1 - b) * a / 4 - 1 / 2,
        a / 2 - 1 / (2 * (2 - theta)),
        (a * (2 + k - theta) - 1) * (1 + k) / ((2 + k - theta) * (2 + k)) + xi,
    ]
    vartheta = max(vt_terms)
    # with k == 0 the capacity term carries no vartheta; skip it to keep exact inputs exact
    capacity = 1 / (2 - theta) if k == 0 else 1 / (2 + k - theta) - k / (1 + k) * vartheta
    lam_terms = [eta, a * b, 1 - q * (1 - b) * a / 2, 1 / (2 - theta), capacity]
    lam = min(lam_terms) / (q + w)
    ok = True if k == 0 else vartheta < (1 + k) / (k * (2 + k - theta))
    flags = []
    if not ok:
        flags.append("constraint_violated")
    if lam <= 0:
        flags.append("nonpositive_exponent")
    if vartheta < 0:
        flags.append("negative_vartheta")
    return RateExponent(theta, r, vartheta, lam, ok, tuple(flags))


# -- regularization error -----------------------------------------------------------

@dataclass
class DLambdaReport:
    rows: list  # (lambda, D_hat, converged)
    D0: float
    beta: float
    fq_norm_sq: float = float("nan")

    def to_dict(self) -> dict:
        return {"rows": [{"lambda": l, "D": d, "converged": c} for l, d, c in self.rows],
                "D0": self.D0, "beta": self.beta, "fq_norm_sq": self.fq_norm_sq}


def _quadrature_design(dim: int, n: int) -> np.ndarray:
    if dim == 1:
        return ((np.arange(n) + 0.5) / n)[:, None]
    from scipy.stats import qmc

    return qmc.Sobol(dim, scramble=False).random(n)


def _risk_and_derivative(model: ConditionalModel, c: np.ndarray, t: np.ndarray, q: float):
    s = t - c
    zero = np.zeros_like(s)
    if q == 2:
        # symmetric noise: E(u - s)^2 = E u^2 + s^2
        m2 = float(noise_expectation(model, lambda u, rows: u * u, [np.zeros(1)])[0])
        return m2 + s * s, 2 * s
    val = noise_expectation(model, lambda u, rows: psi_q(u - s[rows, None], q), [s, zero])
    if q == 1:
        der = 2 * model.noise_cdf(s) - 1
    else:
        der = noise_expectation(
            model, lambda u, rows: q * np.abs(s[rows, None] - u) ** (q - 1) * np.sign(s[rows, None] - u),
            [s, zero])
    return val, der


def estimate_Dlambda(kernel: KernelSpec, model: ConditionalModel, design: Design | None,
                     q: float, lambda_grid: Sequence[float], n_quad: int = 4096,
                     max_iters: int = 5000, grad_tol: float = 1e-9) -> DLambdaReport:
    """Regularization error on a quadrature design, one regularized solve per lambda.

    The population risk in ``y`` is exact (quadrature); the ``x`` integral uses
    an ``n_quad``-point midpoint (dim 1) or Sobol rule. The hypothesis space is
    spanned by the design points plus, when the model center is itself a
    kernel expansion in the same kernel, that expansion's centers, so that
    ``f_q`` is representable.
    """
    if not len(lambda_grid):
        raise ValueError("lambda grid is empty")
    design = design or Design(model.dim)
    Xq = _quadrature_design(design.dim, n_quad)
    weights = np.full(n_quad, 1.0 / n_quad)
    basis = Xq
    fq_norm = float("nan")
    fq_coeffs = None
    cf = model.center_fn
    if isinstance(cf, KernelExpansion) and cf.kernel == kernel:
        basis = np.vstack([Xq, cf.centers])
        weights = np.concatenate([weights, np.zeros(len(cf.centers))])
        fq_norm = rkhs_norm_sq(cf)
        fq_coeffs = np.concatenate([np.zeros(n_quad), cf.coeffs])
    c_at = model.center(basis)
    base, _ = _risk_and_derivative(model, c_at, c_at, q)
    G = gram(kernel, basis).entries

    def data(v):
        val, der = _risk_and_derivative(model, c_at, v, q)
        return float(weights @ (val - base)), weights * der

    def total(c, lam):
        return data(G @ c)[0] + lam * float(c @ G @ c)

    rows = []
    c0 = np.zeros(len(basis))
    for lam in sorted(float(l) for l in lambda_grid):
        # f_q itself is a feasible start whenever it lies in the span
        if fq_coeffs is not None and total(fq_coeffs, lam) < total(c0, lam):
            c0 = fq_coeffs
        out = minimize_regularized(G, data, lam, c0, max_iters, grad_tol, 1e-14)
        rows.append((lam, float(out["F"]), bool(out["converged"])))
        c0 = out["c"]
    lams = np.array([r[0] for r in rows])
    Ds = np.array([r[1] for r in rows])
    keep = Ds > 0
    if keep.sum() >= 2:
        beta, logD0 = np.polyfit(np.log(lams[keep]), np.log(Ds[keep]), 1)
        D0 = float(np.exp(logD0))
    else:
        beta, D0 = float("nan"), float("nan")
    return DLambdaReport(rows, D0, float(beta), fq_norm)


# -- checks of the comparison and variance inequalities --------------------------

def random_clipped_functions(model: ConditionalModel, n: int, seed: int = 0,
                             kernel: KernelSpec | None = None, n_centers: int = 6):
    """Random functions ``pi(g)`` with values in ``[-1, 1]``.

    Even-indexed members are small kernel perturbations of ``f_q``; odd ones
    are unrelated expansions large enough to hit the clipping.
    """
    kernel = kernel or KernelSpec("gaussian", 0.15)
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        centers = rng.random((n_centers, model.dim))
        if i % 2 == 0:
            scale = 10 ** rng.uniform(-2.5, -0.5)
            g = KernelExpansion(centers, rng.normal(0, scale, n_centers), kernel)
            out.append(lambda X, g=g: project(model.center(X) + g(X)))
        else:
            scale = 10 ** rng.uniform(-1, 0.3)
            g = KernelExpansion(centers, rng.normal(0, scale, n_centers), kernel)
            out.append(lambda X, g=g: project(g(X)))
    return out


def _excess_and_variance(model: ConditionalModel, q: float, f, n_mc: int, seed: int):
    """Paired per-``x`` excess risk and squared loss difference, in one quadrature pass.

    The noise law does not depend on ``x``, so the risk of ``f_q`` is the single
    constant ``E psi_q(u)`` and pairing reduces to subtracting it.
    """
    X = _design_sample(Design(model.dim), n_mc, seed)
    c = model.center(X)
    s = np.asarray(f(X), float) - c
    base = float(noise_expectation(model, lambda u, rows: psi_q(u, q), [np.zeros(1)])[0])

    def both(u, rows):
        lf = psi_q(s[rows, None] - u, q)
        return lf, (lf - psi_q(u, q)) ** 2

    risk, var = noise_expectation(model, both, [s, np.zeros_like(s)])
    return _mc(risk - base), _mc(var), X, c


def _with_slack(lhs: MCEstimate, const: float, ex: MCEstimate, power: float, n_se: float):
    ev = max(ex.value, 0.0)
    rhs = const * ev ** power
    rhs_se = const * power * ev ** (power - 1) * ex.se if ev > 0 else INF
    slack = n_se * math.hypot(lhs.se, rhs_se) if math.isfinite(rhs_se) else INF
    return rhs, slack


def comparison_check(model: ConditionalModel, q: float, functions, n_mc: int = 200_000,
                     seed: int = 0, n_se: float = 5.0) -> list:
    """``||f - f_q||_r <= C_r (E(f) - E(f_q))**(1/(q+w))`` for each ``f``, with MC slack."""
    nt = noise_type(model)
    theta, r = theta_r(q, nt.w, nt.p)
    C_r = comparison_constant(q, nt.w, nt.p, nt.bound_norm)
    e = 1.0 / (q + nt.w)
    rows = []
    for i, f in enumerate(functions):
        ex, _, X, c = _excess_and_variance(model, q, f, n_mc, seed)
        d = np.abs(np.asarray(f(X), float) - c)
        if math.isinf(r):
            lhs = MCEstimate(float(d.max()), 0.0)
        else:
            m = _mc(d ** r)
            val = m.value ** (1.0 / r)
            lhs = MCEstimate(val, m.se * val / (r * m.value) if m.value > 0 else 0.0)
        rhs, slack = _with_slack(lhs, C_r, ex, e, n_se)
        rows.append({"index": i, "lhs": lhs.value, "rhs": rhs, "slack": slack,
                     "ok": lhs.value <= rhs + slack, "excess": ex.value, "C_r": C_r, "r": r})
    return rows


def variance_check(model: ConditionalModel, q: float, functions, n_mc: int = 200_000,
                   seed: int = 0, n_se: float = 5.0) -> list:
    """``E[(psi_q(f-y) - psi_q(f_q-y))**2] <= C_theta (E(f) - E(f_q))**theta``, with MC slack."""
    nt = noise_type(model)
    theta, r = theta_r(q, nt.w, nt.p)
    C_r = comparison_constant(q, nt.w, nt.p, nt.bound_norm)
    grid = _design_sample(Design(model.dim), 20_001, seed + 1)
    sup_fq = float(np.max(np.abs(model.center(grid))))
    C_t = variance_constant(C_r, r, sup_fq)
    rows = []
    for i, f in enumerate(functions):
        ex, lhs, _, _ = _excess_and_variance(model, q, f, n_mc, seed)
        rhs, slack = _with_slack(lhs, C_t, ex, theta, n_se)
        rows.append({"index": i, "lhs": lhs.value, "rhs": rhs, "slack": slack,
                     "ok": lhs.value <= rhs + slack, "excess": ex.value, "C_theta": C_t,
                     "theta": theta})
    return rows


def perturbation_risk_check(model: ConditionalModel, q: float, functions, eps_grid,
                            n_mc: int = 50_000, seed: int = 0) -> list:
    """``E(f) - E(f_q) <= E^eps(f) - E^eps(f_q^eps) + q (||f||_inf**(q-1) + 1) eps``.

    Both sides are paired on the same ``x`` sample, so the comparison is exact
    up to quadrature error; ``f_q^eps`` is the model center.
    """
    design = Design(model.dim)
    X = _design_sample(design, n_mc, seed)
    c = model.center(X)
    rows = []
    for i, f in enumerate(functions):
        fx = np.asarray(f(X), float)
        sup_f = float(np.max(np.abs(fx)))
        lhs = float(np.mean(conditional_risk_many(model, c, fx, LossSpec(q))
                            - conditional_risk_many(model, c, c, LossSpec(q))))
        for eps in eps_grid:
            spec = LossSpec(q, eps)
            ex_eps = float(np.mean(conditional_risk_many(model, c, fx, spec)
                                   - conditional_risk_many(model, c, c, spec)))
            rhs = ex_eps + q * (sup_f ** (q - 1) + 1) * eps
            rows.append({"index": i, "eps": eps, "lhs": lhs, "rhs": rhs,
                         "ok": lhs <= rhs + 1e-10})
    return rows
