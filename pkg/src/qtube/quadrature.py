"""One-dimensional numerics shared by the models and analysis layers.

``golden_section`` minimizes a unimodal scalar function on a bracket.
``piecewise_tanh_sinh`` integrates a batch of integrands, one per row, over
rows of breakpoints using a fixed double-exponential rule per piece. The
rule tolerates algebraic endpoint singularities, which is exactly what the
kinks of ``(|u| - eps)**q`` and ``|u|**phi`` produce once the kinks are
placed on piece boundaries.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI_SQ = (3 - math.sqrt(5)) / 2


def golden_section(f, a: float, b: float, tol: float = 1e-9, max_iter: int = 200):
    """Return ``(x_min, f(x_min))`` for a unimodal ``f`` on ``[a, b]``.

    The bracket is shrunk until its width is below ``tol``; the returned point
    is the best of the interior probes and the bracket midpoint.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    c = a + INV_PHI_SQ * h
    d = a + INV_PHI * h
    fc, fd = f(c), f(d)
    it = 0
    while h > tol and it < max_iter:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            h = b - a
            c = a + INV_PHI_SQ * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = b - a
            d = a + INV_PHI * h
            fd = f(d)
    m = 0.5 * (a + b)
    fm = f(m)
    best = min(((fm, m), (fc, c), (fd, d)))
    return best[1], best[0]


@lru_cache(maxsize=8)
def _ts_rule(h: float, tmax: float):
    t = np.arange(-tmax, tmax + 0.5 * h, h)
    s = 0.5 * np.pi * np.sinh(t)
    w = h * 0.5 * np.pi * np.cosh(t) / np.cosh(s) ** 2
    # distances to the left and right ends of [-1, 1], computed without cancellation
    left = 2.0 / (1.0 + np.exp(-2.0 * s))
    right = 2.0 / (1.0 + np.exp(2.0 * s))
    return left, right, w, t < 0


def piecewise_tanh_sinh(integrand, breaks: np.ndarray, h: float = 0.25, tmax: float = 3.0,
                        chunk: int = 8192) -> np.ndarray:
    """Integrate ``integrand(y, rows)`` over each row of sorted ``breaks``.

    Parameters
    ----------
    integrand : callable
        Called as ``integrand(y, rows)`` with ``y`` of shape (m, nodes) and
        ``rows`` an index array of length m into the batch. Returns an array
        shaped like ``y``, or a tuple of such arrays to integrate several
        functions on the same nodes.
    breaks : array, shape (batch, k)
        Sorted breakpoints per row; pieces of zero length contribute nothing.

    Returns an array of shape (batch,), or (n_out, batch) for tuple integrands.
    """
    breaks = np.asarray(breaks, dtype=float)
    left, right, w, use_left = _ts_rule(h, tmax)
    batch, k = breaks.shape
    out = None
    for start in range(0, batch, chunk):
        rows = np.arange(start, min(start + chunk, batch))
        for j in range(k - 1):
            a = breaks[rows, j][:, None]
            b = breaks[rows, j + 1][:, None]
            half = 0.5 * (b - a)
            y = np.where(use_left, a + half * left, b - half * right)
            vals = integrand(y, rows)
            multi = isinstance(vals, tuple)
            if out is None:
                out = np.zeros((len(vals), batch) if multi else (1, batch))
            for i, v in enumerate(vals if multi else (vals,)):
                out[i, rows] += half[:, 0] * (v @ w)
    return out if multi else out[0]
