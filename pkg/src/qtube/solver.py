"""Regularized empirical risk minimization in representer coefficients.

Minimizes

    F(c) = sum_i w_i * loss_i((G c)_i) + lam * c^T G c

over the coefficient vector ``c`` of ``f = sum_i c_i K(x_i, .)``. For the
kernel machine of :func:`fit`, ``loss_i(v) = psi_q^eps(v - y_i)`` and
``w_i = 1/T``.

The iteration is accelerated gradient descent in the RKHS metric: the
search direction is ``G^{-1} grad F = w * loss'(Gc) + 2 lam c``, i.e. the
functional gradient expressed in coefficients. This removes the Gram
matrix's ill-conditioning from the step size. Step sizes come from
backtracking on the sufficient-decrease condition measured in the same
metric, so no Lipschitz constant is needed; steps are only accepted if the
objective does not increase, and momentum restarts whenever a step is
rejected or the direction turns uphill.

For ``q == 1`` the loss is replaced by its Moreau envelope with parameter
``mu``, driven down geometrically to ``opts.q1_smoothing``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernel import GramMatrix, KernelExpansion, KernelSpec, gram, kappa
from .loss import LossSpec, psi_q_eps, psi_q_eps_grad, psi_q_eps_subgrad
from .models import Dataset

__all__ = ["SolverOptions", "FitResult", "SolverError", "objective", "objective_gradient",
           "fit", "minimize_regularized", "project", "support_set", "ridge_coefficients",
           "smoothed_q1", "optimality_certificate", "DEFAULT_SUPPORT_TOL"]

DEFAULT_SUPPORT_TOL = 1e-7


class SolverError(ValueError):
    pass


@dataclass
class SolverOptions:
    max_iters: int = 5000
    grad_tol: float = 1e-8
    obj_tol: float = 1e-12
    q1_smoothing: float = 1e-6
    init: Optional[np.ndarray] = None  # None means zeros, otherwise a warm start

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.grad_tol > 0 and self.obj_tol > 0 and self.q1_smoothing > 0):
            raise ValueError("tolerances must be > 0")


@dataclass
class FitResult:
    expansion: KernelExpansion
    objective_trace: list
    residuals: np.ndarray
    support: np.ndarray
    rkhs_norm_sq: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def coeffs(self) -> np.ndarray:
        return self.expansion.coeffs

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def sparsity(self) -> float:
        return len(self.support) / len(self.residuals)

    def to_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "residuals": self.residuals.tolist(),
            "support": [int(i) for i in self.support],
            "objective_trace": [float(v) for v in self.objective_trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "rkhs_norm_sq": float(self.rkhs_norm_sq),
            "centers": self.expansion.centers.tolist(),
            "kernel": self.expansion.kernel.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        exp = KernelExpansion(np.array(d["centers"], float), np.array(d["coeffs"], float),
                              KernelSpec.from_dict(d["kernel"]))
        return cls(exp, list(d["objective_trace"]), np.array(d["residuals"], float),
                   np.array(d["support"], dtype=int), float(d["rkhs_norm_sq"]),
                   int(d["iterations"]), bool(d["converged"]), d.get("diagnostics", {}))


def _entries(G) -> np.ndarray:
    return G.entries if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)


def objective(G, ys, coeffs, spec: LossSpec, lam: float) -> float:
    """``(1/T) sum psi_q^eps((Gc)_i - y_i) + lam c^T G c``."""
    G = _entries(G)
    ys = np.asarray(ys, float)
    c = np.asarray(coeffs, float)
    if G.shape != (len(ys), len(ys)) or c.shape != ys.shape:
        raise ValueError("dimension mismatch between Gram matrix, targets and coefficients")
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    Gc = G @ c
    return float(np.mean(psi_q_eps(Gc - ys, spec)) + lam * (c @ Gc))


def objective_gradient(G, ys, coeffs, spec: LossSpec, lam: float) -> np.ndarray:
    """Gradient of :func:`objective` in ``c`` (requires ``q > 1``)."""
    G = _entries(G)
    c = np.asarray(coeffs, float)
    Gc = G @ c
    d = psi_q_eps_grad(Gc - np.asarray(ys, float), spec) / len(c)
    return G @ d + 2 * lam * Gc


def smoothed_q1(r, eps: float, mu: float):
    """Moreau envelope of ``max(|r| - eps, 0)`` and its derivative."""
    v = np.maximum(np.abs(r) - eps, 0.0)
    val = np.where(v <= mu, v * v / (2 * mu), v - 0.5 * mu)
    der = np.sign(r) * np.minimum(v / mu, 1.0)
    return val, der


@dataclass
class _State:
    c: np.ndarray
    Gc: np.ndarray
    F: float


def minimize_regularized(G: np.ndarray, data: Callable, lam: float, c0: np.ndarray,
                         max_iters: int, grad_tol: float, obj_tol: float,
                         true_objective: Optional[Callable] = None, start_iter: int = 0,
                         pgrad_tol: Optional[float] = None):
    """Accelerated preconditioned descent on ``data(Gc) + lam c^T G c``.

    ``data(v)`` returns ``(value, derivative)`` of the data term with respect
    to the fitted values ``v = Gc``. Returns a dict with the final iterate and
    bookkeeping. Iteration continues until the coefficient gradient is below
    ``grad_tol`` and the preconditioned gradient below ``pgrad_tol`` (default
    ``grad_tol * min(1, 2 lam)``; for the square loss that bounds the
    coefficient error by roughly ``grad_tol`` in every eigendirection of G),
    or until the objective stops decreasing at rounding level. ``converged``
    reports the coefficient-gradient test alone.
    """
    if pgrad_tol is None:
        pgrad_tol = grad_tol * min(1.0, 2 * lam)

    def full(c, Gc):
        val, d = data(Gc)
        F = val + lam * float(c @ Gc)
        if not math.isfinite(F):
            raise SolverError("objective is not finite; check the data for NaN/inf")
        return F, d

    c = np.array(c0, dtype=float)
    Gc = G @ c
    F, d = full(c, Gc)
    x = _State(c, Gc, F)
    trace = [true_objective(x.c, x.Gc) if true_objective else F]
    prev = x
    t = 1.0
    step = 1.0
    stall = 0
    it = start_iter
    pgrad = d + 2 * lam * x.c
    grad = G @ d + 2 * lam * x.Gc
    done = bool(np.max(np.abs(grad)) <= grad_tol and np.max(np.abs(pgrad)) <= pgrad_tol)
    best_g = float(np.max(np.abs(grad)))
    while not done and it < max_iters:
        it += 1
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        beta = (t - 1) / t_next
        yc = x.c + beta * (x.c - prev.c)
        yG = x.Gc + beta * (x.Gc - prev.Gc)
        Fy, dy = full(yc, yG)
        g = dy + 2 * lam * yc  # preconditioned gradient at y
        Gg = G @ g
        gGg = float(g @ Gg)
        if gGg <= 0:
            break
        while True:
            zc = yc - step * g
            zG = yG - step * Gg
            Fz, dz = full(zc, zG)
            if Fz <= Fy - 0.5 * step * gGg + 1e-15 * abs(Fy):
                break
            step *= 0.5
            if step < 1e-20:
                break
        prev = x
        if Fz <= x.F:
            x = _State(zc, zG, Fz)
            t = t_next
            # gradient-based restart: momentum pointing uphill
            if float((zc - prev.c) @ Gg) > 0:
                t = 1.0
            step *= 1.25
        else:
            # reject the step and drop the momentum
            t = 1.0
            prev = x
            dz = None
        trace.append(true_objective(x.c, x.Gc) if true_objective else x.F)
        if dz is None:
            _, dz = full(x.c, x.Gc)
        pgrad = dz + 2 * lam * x.c
        grad = G @ dz + 2 * lam * x.Gc
        gnorm = float(np.max(np.abs(grad)))
        done = bool(gnorm <= grad_tol and np.max(np.abs(pgrad)) <= pgrad_tol)
        # near the optimum the objective is flat to rounding; keep going while
        # the gradient still improves
        if prev.F - x.F <= obj_tol * max(abs(x.F), 1e-300) and gnorm >= best_g:
            stall += 1
        else:
            stall = 0
        best_g = min(best_g, gnorm)
        if stall >= 50:
            break
    # convergence is certified by the coefficient gradient alone
    converged = bool(np.max(np.abs(grad)) <= grad_tol)
    return {"c": x.c, "Gc": x.Gc, "F": x.F, "trace": trace, "iterations": it,
            "converged": converged, "grad_inf": float(np.max(np.abs(grad))),
            "pgrad_inf": float(np.max(np.abs(pgrad)))}


def _loss_data(ys: np.ndarray, spec: LossSpec, weights: np.ndarray, mu: float | None = None):
    if spec.q == 1:
        def data(v):
            val, der = smoothed_q1(v - ys, spec.eps, mu)
            return float(weights @ val), weights * der
    elif spec.q == 2 and spec.eps == 0:
        def data(v):
            r = v - ys
            return float(weights @ (r * r)), weights * (2 * r)
    else:
        def data(v):
            r = v - ys
            return float(weights @ psi_q_eps(r, spec)), weights * psi_q_eps_grad(r, spec)
    return data


def fit(dataset: Dataset, kernel: KernelSpec, spec: LossSpec, lam: float,
        opts: SolverOptions | None = None, G: GramMatrix | np.ndarray | None = None,
        support_tol: float = DEFAULT_SUPPORT_TOL) -> FitResult:
    """Minimize the regularized empirical risk over the RKHS of ``kernel``.

    ``G`` may be passed to reuse a jitter-free Gram matrix across a sweep.
    """
    opts = opts or SolverOptions()
    if not lam > 0:
        raise ValueError("lambda must be > 0")
    xs, ys = dataset.xs, dataset.ys
    T = len(ys)
    if T < 1:
        raise ValueError("dataset is empty")
    if not np.all(np.isfinite(ys)) or not np.all(np.isfinite(xs)):
        raise SolverError("non-finite data")
    G = _entries(G) if G is not None else gram(kernel, xs).entries
    weights = np.full(T, 1.0 / T)
    c0 = np.zeros(T) if opts.init is None else np.array(opts.init, dtype=float)
    if c0.shape != (T,):
        raise ValueError("warm start has the wrong length")

    def true_obj(c, Gc):
        return float(weights @ psi_q_eps(Gc - ys, spec) + lam * float(c @ Gc))

    diag = {"kappa": kappa(kernel, xs), "lambda": lam, "q": spec.q, "eps": spec.eps}
    if spec.eps >= np.max(np.abs(ys)):
        # every residual of f = 0 sits in the tube and the penalty is zero: exact optimum
        c = np.zeros(T)
        out = {"c": c, "Gc": np.zeros(T), "trace": [0.0], "iterations": 0, "converged": True,
               "grad_inf": 0.0, "pgrad_inf": 0.0}
    elif spec.q > 1:
        out = minimize_regularized(G, _loss_data(ys, spec, weights), lam, c0, opts.max_iters,
                                   opts.grad_tol, opts.obj_tol)
        pgrad_tol = opts.grad_tol * min(1.0, 2 * lam)
        if not out["converged"] or out["pgrad_inf"] > pgrad_tol:
            _newton_refine(G, ys, spec, lam, weights, out, opts.grad_tol, true_obj, pgrad_tol)
    else:
        out = _fit_q1(G, ys, spec, lam, weights, c0, opts, true_obj)
        diag["smoothing_mu"] = out["mu"]
    c, Gc = out["c"], out["Gc"]
    residuals = Gc - ys
    trace = [float(v) for v in out["trace"]]
    diag.update(grad_inf=out["grad_inf"], pgrad_inf=out["pgrad_inf"],
                final_objective=true_obj(c, Gc))
    result = FitResult(KernelExpansion(xs, c, kernel), trace, residuals, np.array([], dtype=int),
                       max(float(c @ Gc), 0.0), int(out["iterations"]), bool(out["converged"]),
                       diag)
    result.support, _ = support_set(result, spec, support_tol)
    return result


def _newton_refine(G, ys, spec, lam, weights, out, grad_tol, true_obj, pgrad_tol=None,
                   steps: int = 60):
    """Damped Newton steps on ``w * loss'(Gc - y) + 2 lam c = 0`` after descent.

    Descent can stall before its tolerances: either the objective no longer
    resolves the remaining decrease (about ``grad**2``, below rounding) or,
    for ``q`` close to 1, the loss curvature near the tube edge makes first-
    order steps tiny. Refinement stops once the coefficient gradient is below
    ``grad_tol`` and the preconditioned one below ``pgrad_tol``. A step is kept
    if it lowers the objective, or leaves it unchanged up to rounding while
    shrinking the scaled gradient; the trace records the running minimum, so
    it stays nonincreasing. Updates ``out`` in place.
    """
    if pgrad_tol is None:
        pgrad_tol = np.inf
    c, Gc = out["c"], out["Gc"]
    F = true_obj(c, Gc)
    q, eps = spec.q, spec.eps

    def grad_of(cc, GGc):
        g = weights * psi_q_eps_grad(GGc - ys, spec) + 2 * lam * cc
        return g, G @ g

    def merit(g, grad):
        return max(float(np.max(np.abs(grad))) / grad_tol, float(np.max(np.abs(g))) / pgrad_tol)

    g, grad = grad_of(c, Gc)
    for _ in range(steps):
        m = merit(g, grad)
        if m <= 1:
            break
        e = np.maximum(np.abs(Gc - ys) - eps, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(e > 0, q * (q - 1) * e ** (q - 2), 0.0)
        d2 = weights * np.minimum(h, 1e12)
        try:
            delta = np.linalg.solve(d2[:, None] * G + 2 * lam * np.eye(len(c)), -g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        accepted = False
        while t > 1e-6:
            c_new = c + t * delta
            Gc_new = G @ c_new
            F_new = true_obj(c_new, Gc_new)
            g_new, grad_new = grad_of(c_new, Gc_new)
            flat = F_new <= F + 1e-14 * max(abs(F), 1e-300)
            if F_new < F or (flat and merit(g_new, grad_new) < m):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        c, Gc, g, grad = c_new, Gc_new, g_new, grad_new
        F = min(F, F_new)
        out["trace"].append(min(out["trace"][-1], F_new))
        out["iterations"] += 1
    out.update(c=c, Gc=Gc, grad_inf=float(np.max(np.abs(grad))),
               pgrad_inf=float(np.max(np.abs(g))))
    out["converged"] = out["grad_inf"] <= grad_tol


def _fit_q1(G, ys, spec, lam, weights, c0, opts, true_obj):
    """Continuation over the smoothing parameter; keeps the best unsmoothed iterate."""
    mu_final = opts.q1_smoothing
    mu = max(mu_final, 1e-2)
    c = c0
    it = 0
    trace = [true_obj(c, G @ c)]
    best_c, best_F = c, trace[0]
    while True:
        last = mu <= mu_final
        # intermediate stages only need a rough solve
        tol = opts.grad_tol if last else max(opts.grad_tol, 1e-3 * mu)
        out = minimize_regularized(G, _loss_data(ys, spec, weights, mu), lam, c, opts.max_iters,
                                   tol, opts.obj_tol, true_objective=true_obj, start_iter=it)
        it = out["iterations"]
        for v in out["trace"][1:]:
            trace.append(min(trace[-1], v))
        F = true_obj(out["c"], out["Gc"])
        if F <= best_F:
            best_c, best_F = out["c"], F
        c = out["c"]
        if last or it >= opts.max_iters:
            break
        mu = max(mu_final, mu * 0.1)
    out["trace"] = trace
    out["iterations"] = it
    out["mu"] = mu
    polished = _polish_q1(G, ys, spec.eps, lam, len(ys), best_c)
    if polished is not None and true_obj(polished, G @ polished) <= best_F + 1e-12:
        F = true_obj(polished, G @ polished)
        trace.append(min(trace[-1], F))
        out["c"], out["Gc"] = polished, G @ polished
        out["grad_inf"] = out["pgrad_inf"] = 0.0
        out["converged"] = True
        out["polished"] = True
        return out
    if best_c is not out["c"]:
        # best unsmoothed iterate came from an earlier stage
        out["c"], out["Gc"] = best_c, G @ best_c
        val, der = smoothed_q1(out["Gc"] - ys, spec.eps, mu)
        pg = weights * der + 2 * lam * best_c
        out["grad_inf"] = float(np.max(np.abs(G @ pg)))
        out["pgrad_inf"] = float(np.max(np.abs(pg)))
        out["converged"] = out["grad_inf"] <= opts.grad_tol
    return out


def _polish_q1(G, ys, eps, lam, T, c, tols=(1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)):
    """Exact optimum for ``q == 1`` from an approximate one, or ``None``.

    With ``G`` invertible the optimality condition reads ``s / T + 2 lam c = 0``
    for a subgradient selection ``s``: ``c`` is fixed at ``-sign(r) / (2 lam T)``
    off the tube edge and ``0`` inside the tube, and residuals on the edge
    are pinned to ``+-eps``, which is a linear system in the remaining
    coefficients. The candidate is returned only if every condition holds.
    """
    r = G @ c - ys
    scale = 1.0 / (2 * lam * T)
    for tol in tols:
        edge = np.abs(np.abs(r) - eps) <= tol
        if eps == 0:
            edge = np.abs(r) <= tol
        sign = np.sign(r)
        s = np.where(np.abs(r) > eps, sign, 0.0)
        cand = np.where(edge, 0.0, -scale * s)
        K = np.flatnonzero(edge)
        if len(K):
            rhs = ys[K] + sign[K] * eps - G[K][:, ~edge] @ cand[~edge]
            try:
                cand[K] = np.linalg.solve(G[np.ix_(K, K)], rhs)
            except np.linalg.LinAlgError:
                continue
        r_new = G @ cand - ys
        s_new = -cand / scale
        slack = 1e-12
        # subgradient membership on the edge, and no point crossing the edge elsewhere
        if eps == 0:
            ok_edge = np.all(np.abs(s_new[edge]) <= 1 + slack)
        else:
            ok_edge = np.all((sign[edge] * s_new[edge] >= -slack) & (np.abs(s_new[edge]) <= 1 + slack))
        out_mask = ~edge & (np.abs(r) > eps)
        in_mask = ~edge & (np.abs(r) <= eps)
        ok_out = np.all(sign[out_mask] * r_new[out_mask] >= eps)
        ok_in = np.all(np.abs(r_new[in_mask]) <= eps)
        if ok_edge and ok_out and ok_in:
            return cand
    return None


def project(values):
    """Clamp values to ``[-1, 1]``."""
    out = np.clip(np.asarray(values, dtype=float), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def support_set(result: FitResult, spec: LossSpec, support_tol: float = DEFAULT_SUPPORT_TOL):
    """Indices whose residual leaves the tube by more than ``support_tol``, and their fraction."""
    if support_tol < 0:
        raise ValueError("support_tol must be >= 0")
    r = np.abs(np.asarray(result.residuals))
    idx = np.flatnonzero(r > spec.eps + support_tol)
    return idx, len(idx) / len(r)


def ridge_coefficients(G, ys, lam: float) -> np.ndarray:
    """Closed form ``(G + lam T I)^{-1} y`` for the square loss without tube."""
    G = _entries(G)
    T = len(ys)
    return np.linalg.solve(G + lam * T * np.eye(T), np.asarray(ys, float))


def optimality_certificate(G, ys, coeffs, spec: LossSpec, lam: float,
                           kink_tol: float = 1e-6) -> float:
    """Smallest ``||G (s / T + 2 lam c)||_inf`` over subgradient selections ``s``.

    ``s_i`` ranges over the subdifferential at residual ``i``; residuals
    within ``kink_tol`` of a kink get the whole interval, which accounts for
    the finite precision of an iterative solve. The selection minimizes the
    Euclidean norm (a bounded least-squares problem); its max-norm is returned.
    """
    from scipy.optimize import lsq_linear

    G = _entries(G)
    ys = np.asarray(ys, float)
    c = np.asarray(coeffs, float)
    T = len(ys)
    r = G @ c - ys
    if spec.q > 1:
        lo = hi = psi_q_eps_subgrad(r, spec)[0]
    else:
        lo = psi_q_eps_subgrad(r - kink_tol, spec)[0]
        hi = psi_q_eps_subgrad(r + kink_tol, spec)[1]
        # widening across the tube edge: points within kink_tol of it can take 0
        lo = np.where(np.abs(np.abs(r) - spec.eps) <= kink_tol, np.minimum(lo, 0.0), lo)
        hi = np.where(np.abs(np.abs(r) - spec.eps) <= kink_tol, np.maximum(hi, 0.0), hi)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    free = hi > lo
    base = G[:, ~free] @ lo[~free] / T + 2 * lam * (G @ c)
    if not free.any():
        return float(np.max(np.abs(base)))
    sol = lsq_linear(G[:, free] / T, -base, bounds=(lo[free], hi[free]), tol=1e-14,
                     lsmr_tol="auto", max_iter=2000)
    return float(np.max(np.abs(G[:, free] @ sol.x / T + base)))
