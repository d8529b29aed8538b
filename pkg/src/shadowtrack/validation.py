"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_vector(value, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array with at least one row and column."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be a nonempty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_nonzero_rows(matrix: np.ndarray, name: str = "embeddings") -> np.ndarray:
    """Row L2 norms of ``matrix``, raising if any row is the zero vector."""
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{name} contains a zero-norm row")
    return norms


def check_row_stochastic(matrix, tol: float = 1e-9, name: str = "matrix") -> np.ndarray:
    """Validate non-negative entries and unit row sums within ``tol``."""
    arr = check_matrix(matrix, name)
    if np.any(arr < 0.0):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"{name} rows do not sum to 1 within {tol}: {sums}")
    return arr


def check_unit_interval(value: float, name: str = "value") -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
