"""Regularized kernel regression with the epsilon-insensitive q-norm loss."""

__version__ = "0.1.0"
