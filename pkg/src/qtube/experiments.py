"""Learning-rate sweeps, sparsity-versus-epsilon studies and the ridge baseline.

A rate experiment fits the kernel machine on fresh samples for every
``(T, repeat)`` cell with ``lam = T**-alpha`` and ``eps = T**-eta`` and
measures ``||pi(f_z) - f_q||`` in ``L^r`` of the design against the analytic
center. Cells are independent; results are sorted by cell before any
reduction so the report does not depend on execution order.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .analysis import RateParams, lr_norm, rate_exponent, theta_r
from .kernel import KernelSpec, gram
from .loss import LossSpec
from .models import ConditionalModel, Dataset, Design, noise_type, sample_dataset
from .solver import SolverOptions, fit, project, ridge_coefficients

__all__ = ["ExperimentConfig", "RateRow", "RateReport", "SparsityRow", "run_rate_experiment",
           "fit_loglog_slope", "sparsity_sweep", "ridge_baseline_error", "pipeline_error",
           "power_rate_config", "parse_real"]

INF = math.inf


def parse_real(v) -> float:
    """Accept numbers, rational strings such as ``"2/3"`` and ``"inf"`` / ``"infinity"``."""
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return INF
        if "/" in s:
            try:
                return float(Fraction(s))
            except (ValueError, ZeroDivisionError) as exc:
                raise ValueError(f"could not parse {v!r} as a rational number") from exc
        return float(s)
    return float(v)


def _real_out(v: float):
    return "inf" if math.isinf(v) else v


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"kind": "power", "phi": 1.0})
    kernel: KernelSpec = field(default_factory=KernelSpec)
    q: float = 2.0
    alpha: float = 2 / 3
    eta: float = 2 / 3
    T_grid: list = field(default_factory=lambda: [64, 128, 256, 512, 1024, 2048])
    repeats: int = 20
    seed: int = 0
    r_norm: float | None = None  # None: the comparison-inequality index r of the model
    n_mc: int = 8192
    grad_tol: float = 1e-8
    max_iters: int = 5000

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec.from_dict(self.kernel)
        self.q = float(self.q)
        self.alpha = parse_real(self.alpha)
        self.eta = parse_real(self.eta)
        if self.r_norm is not None:
            self.r_norm = parse_real(self.r_norm)
        self.T_grid = [int(t) for t in self.T_grid]
        if not self.T_grid or any(t < 1 for t in self.T_grid):
            raise ValueError("T_grid must be a nonempty list of positive integers")
        if any(b <= a for a, b in zip(self.T_grid, self.T_grid[1:])):
            raise ValueError("T_grid must be strictly increasing")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise ValueError("repeats must be an integer >= 1")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not self.alpha > 0 or not self.eta > 0:
            raise ValueError("alpha and eta must be > 0")
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        ConditionalModel.from_dict(self.model)  # validate the descriptor early

    def build_model(self) -> ConditionalModel:
        return ConditionalModel.from_dict(self.model)

    def resolved_r(self) -> float:
        if self.r_norm is not None:
            return self.r_norm
        nt = noise_type(self.build_model())
        return float(theta_r(self.q, nt.w, nt.p)[1])

    def to_dict(self) -> dict:
        return {"model": self.model, "kernel": self.kernel.to_dict(), "q": self.q,
                "alpha": _real_out(self.alpha), "eta": _real_out(self.eta),
                "T_grid": list(self.T_grid), "repeats": int(self.repeats), "seed": int(self.seed),
                "r_norm": None if self.r_norm is None else _real_out(self.r_norm),
                "n_mc": int(self.n_mc), "grad_tol": self.grad_tol, "max_iters": int(self.max_iters)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def power_rate_config(q: float = 2.0, phi: float = 1.0, **kw) -> ExperimentConfig:
    """Power model with ``lam = eps = T**(-(q+phi+1)/(2(q+phi)))``."""
    a = (q + phi + 1) / (2 * (q + phi))
    return ExperimentConfig(model={"kind": "power", "phi": phi}, q=q, alpha=a, eta=a, **kw)


@dataclass
class RateRow:
    T: int
    lam: float
    eps: float
    mean_err: float
    std_err: float
    sparsity: float
    errors: list = field(default_factory=list)  # per-repeat, in repeat order


@dataclass
class RateReport:
    rows: list
    fitted_slope: float
    slope_stderr: float
    theoretical_lambda: float
    r_norm: float
    config: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "rows": [{"T": r.T, "lambda": r.lam, "eps": r.eps, "mean_err": r.mean_err,
                      "std_err": r.std_err, "sparsity": r.sparsity, "errors": r.errors}
                     for r in self.rows],
            "fitted_slope": self.fitted_slope, "slope_stderr": self.slope_stderr,
            "theoretical_lambda": self.theoretical_lambda, "r_norm": _real_out(self.r_norm),
            "config": self.config, "failures": self.failures, "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def to_csv(self) -> str:
        lines = ["T,lambda,eps,mean_err,std_err,sparsity"]
        for r in self.rows:
            lines.append(",".join([str(r.T)] + [repr(float(v)) for v in
                                                (r.lam, r.eps, r.mean_err, r.std_err, r.sparsity)]))
        return "\n".join(lines) + "\n"

    def plot_csv(self) -> str:
        """``(log T, log mean error)`` pairs."""
        lines = ["log_T,log_mean_err"]
        for r in self.rows:
            if r.mean_err > 0:
                lines.append(f"{math.log(r.T)!r},{math.log(r.mean_err)!r}")
        return "\n".join(lines) + "\n"


def pipeline_error(coeffs, dataset: Dataset, kernel: KernelSpec, model: ConditionalModel,
                   r_norm: float, n_mc: int, seed: int) -> float:
    """``||pi(f) - f_q||_r`` for ``f = sum_i coeffs[i] K(x_i, .)``."""
    from .kernel import KernelExpansion

    f = KernelExpansion(dataset.xs, coeffs, kernel)
    return lr_norm(lambda X: project(f(X)), model.center, r_norm, Design(model.dim),
                   n_mc, seed).value


def _cell(cfg: ExperimentConfig, model: ConditionalModel, r_norm: float, T: int, rep: int):
    seed = cfg.seed + rep
    lam = T ** (-cfg.alpha)
    eps = 0.0 if math.isinf(cfg.eta) else T ** (-cfg.eta)
    data = sample_dataset(model, Design(model.dim), T, seed)
    res = fit(data, cfg.kernel, LossSpec(cfg.q, eps), lam,
              SolverOptions(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol))
    err = pipeline_error(res.coeffs, data, cfg.kernel, model, r_norm, cfg.n_mc,
                         seed + 1_000_003)
    return err, res.sparsity, res.converged


def run_rate_experiment(config: ExperimentConfig, threads: int = 1) -> RateReport:
    """Sweep ``T_grid`` with ``repeats`` independent samples per ``T``.

    A failing cell is recorded in ``failures`` and left out of its row's
    statistics; it does not abort the sweep.
    """
    model = config.build_model()
    r_norm = config.resolved_r()
    cells = [(T, rep) for T in config.T_grid for rep in range(config.repeats)]

    def run(cell):
        try:
            return cell, _cell(config, model, r_norm, *cell), None
        except Exception as exc:  # recorded, not fatal
            return cell, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    results.sort(key=lambda r: r[0])

    rows, failures = [], []
    for T in config.T_grid:
        mine = [r for r in results if r[0][0] == T]
        errs = [r[1][0] for r in mine if r[1] is not None]
        sp = [r[1][1] for r in mine if r[1] is not None]
        for (t, rep), out, msg in mine:
            if msg is not None:
                failures.append({"T": t, "repeat": rep, "error": msg})
            elif not out[2]:
                failures.append({"T": t, "repeat": rep, "error": "solver did not converge"})
        lam = T ** (-config.alpha)
        eps = 0.0 if math.isinf(config.eta) else T ** (-config.eta)
        mean = float(np.mean(errs)) if errs else float("nan")
        std = float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0
        rows.append(RateRow(T, lam, eps, mean, std, float(np.mean(sp)) if sp else float("nan"),
                            [float(e) for e in errs]))

    pts = [(r.T, r.mean_err) for r in rows if math.isfinite(r.mean_err)]
    try:
        slope, se = fit_loglog_slope(pts)
    except ValueError:
        slope, se = float("nan"), float("nan")
    nt = noise_type(model)
    theo = rate_exponent(RateParams(q=config.q, w=nt.w, p=nt.p,
                                    alpha=min(config.alpha, 1.0), eta=config.eta))
    return RateReport(rows, slope, se, float(theo.lambda_exp), r_norm, config.to_dict(), failures)


def fit_loglog_slope(points) -> tuple:
    """Least-squares slope of ``log error`` against ``log T`` and its standard error."""
    pts = list(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points to fit a slope")
    T = np.array([p[0] for p in pts], float)
    e = np.array([p[1] for p in pts], float)
    if np.any(T <= 0) or np.any(~(e > 0)):
        raise ValueError("T and error values must be positive")
    x, y = np.log(T), np.log(e)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("T values must not all be equal")
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = len(x) - 2
    se = math.sqrt(float(resid @ resid) / dof / sxx)
    return slope, se


@dataclass
class SparsityRow:
    eps: float
    ratio: float
    objective: float
    error: float
    converged: bool = True

    def as_tuple(self):
        return (self.eps, self.ratio, self.objective, self.error)


def sparsity_sweep(dataset: Dataset, kernel: KernelSpec, q: float, lam: float, eps_grid,
                   model: ConditionalModel | None = None, r_norm: float = 2.0,
                   n_mc: int = 8192, seed: int = 0, opts: SolverOptions | None = None) -> list:
    """Warm-started fits over ascending ``eps``; the error needs ``model`` (else NaN)."""
    grid = sorted(float(e) for e in eps_grid)
    if not grid:
        raise ValueError("eps grid is empty")
    if any(e < 0 for e in grid):
        raise ValueError("eps values must be >= 0")
    opts = opts or SolverOptions()
    if model is None and dataset.model is not None:
        model = ConditionalModel.from_dict(dataset.model)
    G = gram(kernel, dataset.xs).entries
    init = opts.init
    rows = []
    for eps in grid:
        o = SolverOptions(opts.max_iters, opts.grad_tol, opts.obj_tol, opts.q1_smoothing, init)
        res = fit(dataset, kernel, LossSpec(q, eps), lam, o, G=G)
        err = (pipeline_error(res.coeffs, dataset, kernel, model, r_norm, n_mc, seed)
               if model is not None else float("nan"))
        rows.append(SparsityRow(eps, res.sparsity, res.objective, err, res.converged))
        init = res.coeffs
    return rows


def ridge_baseline_error(dataset: Dataset, kernel: KernelSpec, lam: float,
                         model: ConditionalModel, r_norm: float = 2.0, n_mc: int = 8192,
                         seed: int = 0) -> float:
    """Error of the closed-form least-squares pipeline (no tube)."""
    G = gram(kernel, dataset.xs).entries
    return pipeline_error(ridge_coefficients(G, dataset.ys, lam), dataset, kernel, model,
                          r_norm, n_mc, seed)
