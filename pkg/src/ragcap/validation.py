"""Input validation helpers shared by the functional API and the estimators."""

from __future__ import annotations

import numpy as np

from .errors import DimMismatchError, NonFiniteError

__all__ = ["as_vector", "as_matrix", "check_dim"]


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array; reject empty or non-finite input."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} must have at least one component")
    if not np.isfinite(v).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array; reject non-finite input."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[1] == 0:
        raise ValueError(f"{name} must have at least one column")
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def check_dim(got: int, expected: int, name: str = "vector") -> None:
    if got != expected:
        raise DimMismatchError(f"{name} has dim {got}, expected {expected}")
