"""Synthetic conditional distributions with analytic densities.

Each model is ``y = c(x) + u`` with ``u`` drawn from a fixed symmetric law
supported on ``[-hw, hw]`` and ``c`` a center function clamped so that the
support of every conditional stays inside ``[-1/2, 1/2]``:

* ``power``: density ``A |u|**phi`` on ``|u| <= 1/4``, ``A = 2**(2 phi + 1) (phi + 1)``
* ``gaussian_truncated``: ``N(0, sigma**2)`` truncated to ``|u| <= 1/4`` and renormalized
* ``uniform``: uniform on ``[-h, h]``

By symmetry the minimizer of the conditional q-norm risk is the center for
every ``q`` and every tube width, so ``f_q == f_q^eps == c``. :func:`target`
recovers it numerically from the risk as an independent check.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate, special
from scipy.optimize import brentq

from .kernel import KernelExpansion, KernelSpec, as_points
from .loss import LossSpec, psi_q_eps
from .quadrature import golden_section, piecewise_tanh_sinh

__all__ = ["ConditionalModel", "NoiseType", "Design", "Dataset", "default_center",
           "conditional_density", "sample_dataset", "conditional_risk", "conditional_risk_many",
           "noise_expectation", "target", "noise_type", "noise_certificate", "QuadratureError"]

SUPPORT = 0.5
CENTER_BOUND = 0.25
KINDS = ("power", "gaussian_truncated", "uniform")


class QuadratureError(RuntimeError):
    pass


def default_center(dim: int = 1, kernel: KernelSpec | None = None) -> KernelExpansion:
    """Three-term Gaussian expansion with sup-norm 1/4 on ``[0, 1]**dim``.

    In one dimension the sup is located numerically and the coefficients are
    scaled to hit 1/4 exactly. In higher dimension the scale uses the bound
    ``sup |f| <= sum |c_i|`` (every kernel value is at most 1).
    """
    kernel = kernel or KernelSpec("gaussian", 0.2)
    centers = np.array([[0.2] * dim, [0.5] * dim, [0.85] * dim])
    coeffs = np.array([1.0, -0.7, 0.9])
    f = KernelExpansion(centers, coeffs, kernel)
    if dim == 1 and kernel.kind == "gaussian":
        from scipy.optimize import minimize_scalar

        grid = np.linspace(0, 1, 2001)
        vals = np.abs(f(grid))
        i = int(np.argmax(vals))
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(lambda x: -abs(f(np.array([x]))[0]), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12})
        sup = max(-res.fun, vals.max())
    else:
        sup = np.abs(coeffs).sum()
    return KernelExpansion(centers, coeffs * (CENTER_BOUND / sup), kernel)


@dataclass(frozen=True)
class Design:
    """Input distribution: uniform on the unit cube ``[0, 1]**dim``."""

    dim: int = 1
    kind: str = "uniform"

    def __post_init__(self):
        if self.kind != "uniform":
            raise ValueError(f"unsupported design kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("design dimension must be a positive integer")

    def sample(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.random((m, self.dim))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True)
class NoiseType:
    """Average-type descriptor with constant ``a`` and ``b``.

    ``renorm`` is the truncation mass of the truncated Gaussian (1 otherwise);
    ``b / renorm`` is a sharper valid constant than ``b``.
    """

    p: float
    w: float
    a: float
    b: float
    bound_norm: float
    renorm: float = 1.0


@dataclass(eq=False)
class ConditionalModel:
    kind: str
    param: float
    center_fn: Union[KernelExpansion, Callable, None] = None
    dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if not self.param > 0:
            raise ValueError("model parameter must be > 0")
        if self.kind == "uniform" and self.param > SUPPORT:
            raise ValueError("uniform halfwidth must lie in (0, 1/2]")
        if self.center_fn is None:
            self.center_fn = default_center(self.dim)

    # -- shape of the noise law -------------------------------------------------
    @property
    def halfwidth(self) -> float:
        return self.param if self.kind == "uniform" else 0.25

    @property
    def center_bound(self) -> float:
        return min(CENTER_BOUND, SUPPORT - self.halfwidth)

    @property
    def power_const(self) -> float:
        phi = self.param
        return 2.0 ** (2 * phi + 1) * (phi + 1)

    @property
    def gauss_mass(self) -> float:
        return float(special.erf(self.halfwidth / (self.param * math.sqrt(2.0))))

    @property
    def kink(self) -> bool:
        """True if the noise density is non-smooth at u = 0."""
        return self.kind == "power"

    def noise_pdf(self, u):
        u = np.asarray(u, dtype=float)
        hw = self.halfwidth
        inside = np.abs(u) <= hw
        if self.kind == "power":
            val = self.power_const * np.abs(u) ** self.param
        elif self.kind == "gaussian_truncated":
            s = self.param
            val = np.exp(-0.5 * (u / s) ** 2) / (math.sqrt(2 * math.pi) * s * self.gauss_mass)
        else:
            val = np.full_like(u, 1.0 / (2 * hw))
        return np.where(inside, val, 0.0)

    def scalar_pdf(self):
        """Pure-Python density of the noise for adaptive quadrature callbacks."""
        hw = self.halfwidth
        if self.kind == "power":
            A, phi = self.power_const, self.param

            def pdf(u):
                au = abs(u)
                return A * au ** phi if au <= hw else 0.0
        elif self.kind == "gaussian_truncated":
            s = self.param
            norm = 1.0 / (math.sqrt(2 * math.pi) * s * self.gauss_mass)

            def pdf(u):
                return norm * math.exp(-0.5 * (u / s) ** 2) if abs(u) <= hw else 0.0
        else:
            dens = 1.0 / (2 * hw)

            def pdf(u):
                return dens if abs(u) <= hw else 0.0
        return pdf

    def noise_cdf(self, u):
        u = np.clip(np.asarray(u, dtype=float), -self.halfwidth, self.halfwidth)
        if self.kind == "power":
            phi = self.param
            return 0.5 + np.sign(u) * 2.0 ** (2 * phi + 1) * np.abs(u) ** (phi + 1)
        if self.kind == "gaussian_truncated":
            s = self.param
            return 0.5 + 0.5 * special.erf(u / (s * math.sqrt(2.0))) / self.gauss_mass
        return (u + self.halfwidth) / (2 * self.halfwidth)

    def noise_quantile(self, prob):
        prob = np.asarray(prob, dtype=float)
        hw = self.halfwidth
        if self.kind == "power":
            phi = self.param
            d = prob - 0.5
            return np.sign(d) * (np.abs(d) / 2.0 ** (2 * phi + 1)) ** (1.0 / (phi + 1))
        if self.kind == "uniform":
            return hw * (2 * prob - 1)
        # bisection on the analytic CDF; fixed iteration count keeps it reproducible
        lo = np.full_like(prob, -hw)
        hi = np.full_like(prob, hw)
        while np.max(hi - lo) > 1e-12:
            mid = 0.5 * (lo + hi)
            below = self.noise_cdf(mid) < prob
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    # -- center -----------------------------------------------------------------
    def raw_center(self, X) -> np.ndarray:
        X = as_points(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: points have dim {X.shape[1]}, model {self.dim}")
        return np.asarray(self.center_fn(X), dtype=float).reshape(len(X))

    def center(self, X) -> np.ndarray:
        """Conditional center, which is also f_q and f_q^eps for these symmetric laws."""
        b = self.center_bound
        return np.clip(self.raw_center(X), -b, b)

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        name = {"power": "phi", "gaussian_truncated": "sigma", "uniform": "halfwidth"}[self.kind]
        if isinstance(self.center_fn, KernelExpansion):
            center = self.center_fn.to_dict()
        elif getattr(self.center_fn, "descriptor", None):
            center = self.center_fn.descriptor
        else:
            raise ValueError("center function is not serializable")
        return {"kind": self.kind, name: self.param, "dim": self.dim, "center": center}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalModel":
        d = dict(d)
        kind = d.pop("kind")
        name = {"power": "phi", "gaussian_truncated": "sigma", "uniform": "halfwidth"}.get(kind)
        if name is None:
            raise ValueError(f"unknown model kind {kind!r}")
        param = float(d.pop(name))
        dim = int(d.pop("dim", 1))
        center = d.pop("center", "default")
        if d:
            raise ValueError(f"unexpected model fields {sorted(d)}")
        return cls(kind, param, make_center(center, dim), dim)


def _zero(X):
    return np.zeros(len(as_points(X)))


_zero.descriptor = "zero"


def make_center(desc, dim: int = 1, kernel: KernelSpec | None = None):
    if desc in (None, "default"):
        f = default_center(dim, kernel)
        return f
    if desc == "zero":
        return _zero
    if isinstance(desc, dict):
        return KernelExpansion.from_dict(desc)
    raise ValueError(f"cannot build center function from {desc!r}")


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    seed: int | None = None
    model: dict | None = None

    def __post_init__(self):
        self.xs = as_points(self.xs)
        self.ys = np.asarray(self.ys, dtype=float).ravel()
        if len(self.xs) != len(self.ys):
            raise ValueError("xs and ys must have equal length")

    def __len__(self):
        return len(self.ys)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x_{j}" for j in range(self.xs.shape[1])] + ["y"])
        for x, y in zip(self.xs, self.ys):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[-1] != "y" or any(h != f"x_{j}" for j, h in enumerate(header[:-1])):
            raise ValueError("dataset CSV header must be x_0,...,x_{n-1},y")
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(arr[:, :-1], arr[:, -1])


def conditional_density(model: ConditionalModel, x, y):
    c = model.center(np.atleast_2d(np.asarray(x, float)))[0]
    return model.noise_pdf(np.asarray(y, float) - c)


def sample_dataset(model: ConditionalModel, design: Design | None = None, T: int = 100,
                   seed: int = 0) -> Dataset:
    design = design or Design(model.dim)
    if not isinstance(design, Design):
        raise ValueError(f"invalid design {design!r}")
    if design.dim != model.dim:
        raise ValueError("design and model dimensions differ")
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    xs = design.sample(rng, T)
    u = model.noise_quantile(rng.random(T))
    ys = model.center(xs) + u
    return Dataset(xs, ys, seed, model.to_dict() if _serializable(model) else None)


def _serializable(model) -> bool:
    return isinstance(model.center_fn, KernelExpansion) or bool(getattr(model.center_fn, "descriptor", None))


def _quad(fn, a, b, points):
    pts = sorted(p for p in set(points) if a < p < b)
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(fn, a, b, points=pts or None, epsabs=1e-10, epsrel=1e-12,
                                    limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return val


def conditional_risk(model: ConditionalModel, x, t: float, spec: LossSpec) -> float:
    """Integral of ``psi_q^eps(y - t)`` against the conditional law at ``x``."""
    c = float(model.center(np.atleast_2d(np.asarray(x, float)))[0])
    return _risk_at_center(model, c, float(t), spec)


def _risk_at_center(model, c, t, spec):
    hw = model.halfwidth
    s = t - c  # loss argument is u - s in the noise variable u
    pdf = model.scalar_pdf()
    q, eps = spec.q, spec.eps

    def fn(u):
        e = abs(u - s) - eps
        return e ** q * pdf(u) if e > 0 else 0.0

    return _quad(fn, -hw, hw, [0.0, s - spec.eps, s + spec.eps, s])


def conditional_risk_many(model: ConditionalModel, centers, ts, spec: LossSpec) -> np.ndarray:
    """Batched conditional risk for conditional centers ``centers`` and predictions ``ts``."""
    s = np.asarray(ts, float) - np.asarray(centers, float)
    kinks = [s] if spec.eps == 0 else [s - spec.eps, s + spec.eps]
    return noise_expectation(model, lambda u, rows: psi_q_eps(u - s[rows, None], spec), kinks)


def noise_expectation(model: ConditionalModel, fn, kinks) -> np.ndarray:
    """Batched ``E[fn(u, rows)]`` over the noise law.

    ``kinks`` lists per-row locations (arrays of the batch length) where
    ``fn`` is non-smooth; they become quadrature breakpoints together with
    the model's own (support ends, the density kink, and a few standard
    deviations for the truncated Gaussian).
    """
    hw = model.halfwidth
    cols = [np.clip(np.asarray(k, float), -hw, hw) for k in kinks]
    n = len(cols[0])
    fixed = [-hw, hw]
    if model.kink:
        fixed.append(0.0)
    if model.kind == "gaussian_truncated":
        fixed += [v * model.param for v in (-6, -4, -2, -1, 0, 1, 2, 4, 6) if abs(v * model.param) < hw]
    cols += [np.full(n, v) for v in fixed]
    breaks = np.sort(np.stack(cols, axis=1), axis=1)

    def weighted(u, rows):
        vals = fn(u, rows)
        pdf = model.noise_pdf(u)
        if isinstance(vals, tuple):
            return tuple(v * pdf for v in vals)
        return vals * pdf

    return piecewise_tanh_sinh(weighted, breaks)


def target(model: ConditionalModel, x, spec: LossSpec, tol: float = 1e-9) -> float:
    """Minimizer over ``[-1/2, 1/2]`` of the conditional risk at ``x``.

    Golden-section search brackets the minimizer; comparisons of risk values
    stop resolving it at about ``sqrt(machine eps)`` relative to the risk's
    curvature, so the bracket is refined by a root of the derivative when
    one is bracketed nearby (through the CDF when ``q == 1``).
    """
    c = float(model.center(np.atleast_2d(np.asarray(x, float)))[0])
    t, _ = golden_section(lambda t: _risk_at_center(model, c, t, spec), -SUPPORT, SUPPORT, tol)
    if spec.q > 1:
        t = _refine_stationary(model, c, t, spec)
    else:
        t = _refine_median(model, c, t, spec)
    return t


def _refine_median(model, c, t, spec, width: float = 1e-4) -> float:
    """For q == 1 the risk derivative is ``F(s - eps) + F(s + eps) - 1`` in closed form."""
    eps = spec.eps

    def der(v):
        s = v - c
        return float(model.noise_cdf(s - eps) + model.noise_cdf(s + eps)) - 1.0

    lo, hi = max(t - width, -SUPPORT), min(t + width, SUPPORT)
    dlo, dhi = der(lo), der(hi)
    if dlo >= 0 or dhi <= 0:
        return t  # flat stretch (set-valued minimizer) or nothing bracketed
    return float(brentq(der, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def _risk_derivative(model, c, t, spec) -> float:
    """``d/dt`` of the conditional risk, as a difference of one-sided integrals."""
    hw = model.halfwidth
    s, q, eps = t - c, spec.q, spec.eps
    pdf = model.scalar_pdf()
    kink = [0.0] if model.kink else []
    up_lo, dn_hi = min(max(s + eps, -hw), hw), max(min(s - eps, hw), -hw)
    up = _quad(lambda u: max(u - s - eps, 0.0) ** (q - 1) * pdf(u), up_lo, hw, kink) if up_lo < hw else 0.0
    dn = _quad(lambda u: max(s - eps - u, 0.0) ** (q - 1) * pdf(u), -hw, dn_hi, kink) if dn_hi > -hw else 0.0
    return q * (dn - up)


def _refine_stationary(model, c, t, spec, width: float = 1e-5) -> float:
    if spec.eps >= model.halfwidth:
        return t  # the tube can swallow the support: the risk is flat near its minimum
    lo, hi = max(t - width, -SUPPORT), min(t + width, SUPPORT)
    try:
        dlo, dhi = _risk_derivative(model, c, lo, spec), _risk_derivative(model, c, hi, spec)
        if dlo == 0 or dhi == 0 or np.sign(dlo) == np.sign(dhi):
            # flat stretch or no sign change: keep the golden-section point
            return t
        return float(brentq(lambda v: _risk_derivative(model, c, v, spec), lo, hi, xtol=1e-14,
                            rtol=4 * np.finfo(float).eps))
    except QuadratureError:
        return t


def noise_type(model: ConditionalModel) -> NoiseType:
    inf = math.inf
    if model.kind == "power":
        phi = model.param
        w, a, b = phi + 1, 0.25, 2.0 ** (2 * phi + 1)
        return NoiseType(inf, w, a, b, 1.0 / (b * a ** w))
    if model.kind == "gaussian_truncated":
        s = model.param
        b = math.exp(-0.5) / (math.sqrt(2 * math.pi) * s)
        return NoiseType(inf, 1.0, s, b, 1.0 / (b * s), renorm=model.gauss_mass)
    h = model.param
    return NoiseType(inf, 1.0, h, 1.0 / (2 * h), 1.0 / ((1.0 / (2 * h)) * h))


def noise_certificate(model: ConditionalModel, n_x: int = 50, n_s: int = 50, seed: int = 0) -> float:
    """Smallest margin ``rho_x([f_q, f_q + s]) - b s**w`` (and the mirrored interval)
    over random ``x`` and ``s`` in ``(0, a]``, masses by adaptive quadrature."""
    nt = noise_type(model)
    rng = np.random.default_rng(seed)
    xs = Design(model.dim).sample(rng, n_x)
    worst = math.inf
    pdf = model.scalar_pdf()
    for x in xs:
        c = fq = float(model.center(x[None, :])[0])
        for s in rng.uniform(0, 1, n_s) * nt.a:
            s = max(s, 1e-12)
            lower = nt.b * s ** nt.w
            up = _quad(lambda y: pdf(y - c), fq, fq + s, [c])
            down = _quad(lambda y: pdf(y - c), fq - s, fq, [c])
            worst = min(worst, up - lower, down - lower)
    return worst
