"""Pointwise losses: the epsilon-insensitive q-norm loss, its subdifferential,
and the pinball loss used as a quantile baseline.

All functions accept scalars or numpy arrays and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LossSpec", "psi_q", "psi_q_eps", "psi_q_eps_subgrad", "psi_q_eps_grad",
           "pinball"]


@dataclass(frozen=True)
class LossSpec:
    """Exponent ``q >= 1`` and tube half-width ``eps >= 0``."""

    q: float
    eps: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.q) or self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if not np.isfinite(self.eps) or self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")

    @property
    def smooth(self) -> bool:
        return self.q > 1


def _excess(u, eps):
    # clamp before the power so rounding never feeds a negative base
    return np.maximum(np.abs(u) - eps, 0.0)


def psi_q(u, q: float):
    """Plain q-norm loss ``|u|**q``."""
    return np.abs(u) ** q


def psi_q_eps(u, spec: LossSpec):
    """``(|u| - eps)**q`` outside the tube ``|u| <= eps``, zero inside.

    With ``eps == 0`` this evaluates ``max(|u|, 0)**q`` which is bitwise
    identical to :func:`psi_q`.
    """
    return _excess(u, spec.eps) ** spec.q


def psi_q_eps_grad(u, spec: LossSpec):
    """Derivative for ``q > 1`` (the loss is C^1 there)."""
    if spec.q == 1:
        raise ValueError("psi_q_eps is not differentiable for q == 1; use psi_q_eps_subgrad")
    e = _excess(u, spec.eps)
    if spec.q == 2:
        return 2.0 * e * np.sign(u)
    return spec.q * e ** (spec.q - 1) * np.sign(u)


def psi_q_eps_subgrad(u, spec: LossSpec):
    """Subdifferential of the loss at ``u`` as a pair ``(lo, hi)``.

    For ``q > 1`` the interval is the singleton derivative. For ``q == 1``
    it is ``sign(u)`` outside the tube, ``0`` strictly inside, ``[0, 1]``
    at ``u = eps``, ``[-1, 0]`` at ``u = -eps`` and ``[-1, 1]`` at
    ``u = 0`` when ``eps == 0``.
    """
    u = np.asarray(u, dtype=float)
    if spec.q > 1:
        g = psi_q_eps_grad(u, spec)
        lo, hi = g, np.array(g, copy=True)
    else:
        a = np.abs(u)
        outside = a > spec.eps
        on_edge = a == spec.eps
        s = np.sign(u)
        lo = np.where(outside, s, 0.0)
        hi = np.where(outside, s, 0.0)
        # at the kink the interval spans 0 and the outer slope
        lo = np.where(on_edge & (u <= 0), -1.0, lo)
        hi = np.where(on_edge & (u >= 0), 1.0, hi)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def pinball(u, tau: float):
    """Quantile (pinball) loss with slope ``tau`` on the right, ``tau - 1`` on the left."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, tau * u, (tau - 1) * u)
    return float(out) if out.ndim == 0 else out
