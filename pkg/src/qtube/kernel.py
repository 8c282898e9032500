"""Mercer kernels, Gram matrices and finite kernel expansions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

__all__ = ["KernelSpec", "GramMatrix", "KernelExpansion", "as_points", "kernel_eval",
           "kernel_matrix", "gram", "expansion_eval", "rkhs_norm_sq", "kappa"]

DEFAULT_JITTER = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    kind: Literal["gaussian", "polynomial", "linear"] = "gaussian"
    bandwidth: float = 0.2
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.bandwidth > 0:
            raise ValueError("gaussian bandwidth must be > 0")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
            if self.offset < 0:
                raise ValueError("polynomial offset must be >= 0")

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "bandwidth": self.bandwidth}
        if self.kind == "polynomial":
            return {"kind": "polynomial", "degree": int(self.degree), "offset": self.offset}
        return {"kind": "linear"}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def as_points(X) -> np.ndarray:
    """Coerce to a float array of shape (m, n); a 1-d input is m points in R^1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        return X.reshape(1, 1)
    if X.ndim == 1:
        return X[:, None]
    if X.ndim != 2:
        raise ValueError(f"points must be 1-d or 2-d, got shape {X.shape}")
    return X


def kernel_matrix(spec: KernelSpec, X, Z) -> np.ndarray:
    """Cross-kernel matrix ``K(X[i], Z[j])``."""
    X, Z = as_points(X), as_points(Z)
    if X.shape[1] != Z.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if spec.kind == "gaussian":
        # direct differences rather than the |x|^2 - 2xz + |z|^2 expansion,
        # which loses symmetry and accuracy for nearby points
        d2 = np.zeros((X.shape[0], Z.shape[0]))
        for k in range(X.shape[1]):
            diff = X[:, k, None] - Z[None, :, k]
            d2 += diff * diff
        return np.exp(-d2 / (2.0 * spec.bandwidth ** 2))
    dot = X @ Z.T
    if spec.kind == "linear":
        return dot
    return (dot + spec.offset) ** int(spec.degree)


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x, x2 = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(x2, float))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(kernel_matrix(spec, x[None, :], x2[None, :])[0, 0])


def kappa(spec: KernelSpec, X) -> float:
    """max sqrt(K(x, x)) over the given points (a stand-in for the supremum over X)."""
    X = as_points(X)
    diag = np.array([kernel_matrix(spec, X[i:i + 1], X[i:i + 1])[0, 0] for i in range(len(X))])
    return float(np.sqrt(diag.max()))


@dataclass
class GramMatrix:
    entries: np.ndarray
    jitter: float = 0.0

    @property
    def raw(self) -> np.ndarray:
        """Entries with the diagonal jitter removed."""
        if self.jitter == 0:
            return self.entries
        return self.entries - self.jitter * np.eye(len(self.entries))

    def __len__(self):
        return len(self.entries)


def gram(spec: KernelSpec, X, jitter: float = 0.0) -> GramMatrix:
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    X = as_points(X)
    K = kernel_matrix(spec, X, X)
    # elementwise construction is symmetric for gaussian; enforce it exactly for the rest
    K = np.triu(K) + np.triu(K, 1).T
    if jitter:
        K = K + jitter * np.eye(len(K))
    return GramMatrix(K, float(jitter))


@dataclass
class KernelExpansion:
    """``f = sum_i coeffs[i] * K(centers[i], .)``."""

    centers: np.ndarray
    coeffs: np.ndarray
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        self.centers = as_points(self.centers)
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if len(self.centers) != len(self.coeffs):
            raise ValueError("centers and coeffs must have equal length")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def __call__(self, X, chunk: int = 4096) -> np.ndarray:
        X = as_points(X)
        out = np.empty(len(X))
        for start in range(0, len(X), chunk):
            block = X[start:start + chunk]
            out[start:start + chunk] = kernel_matrix(self.kernel, block, self.centers) @ self.coeffs
        return out

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "coeffs": self.coeffs.tolist(),
                "kernel": self.kernel.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelExpansion":
        return cls(np.array(d["centers"], float), np.array(d["coeffs"], float),
                   KernelSpec.from_dict(d["kernel"]))


def expansion_eval(f: KernelExpansion, x) -> float:
    x = np.atleast_1d(np.asarray(x, float))
    if x.shape != (f.dim,):
        raise ValueError(f"dimension mismatch: point {x.shape} vs centers dim {f.dim}")
    return float(f(x[None, :])[0])


def rkhs_norm_sq(f: KernelExpansion) -> float:
    G = gram(f.kernel, f.centers).entries
    val = float(f.coeffs @ G @ f.coeffs)
    return max(val, 0.0)
