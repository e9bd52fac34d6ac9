"""Small input checks shared across modules."""
from __future__ import annotations

import numpy as np

CODE_DIM = 64


def check_vector(x, size: int, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_matrix(x, shape: tuple[int, int], name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_code(code, dim: int = CODE_DIM) -> np.ndarray:
    return check_vector(code, dim, "shape code")


def check_positive(value, name: str) -> float:
    v = float(value)
    if not np.isfinite(v) or v <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v


def check_unit_interval(value, name: str) -> float:
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return v


def check_row_stochastic(M, name: str = "transition matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.any(M < 0) or not np.allclose(M.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError(f"{name} rows must be non-negative and sum to 1")
    return M


def check_spd(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return M
