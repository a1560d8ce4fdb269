"""Small input checks shared by the instance and class constructors."""

from __future__ import annotations

import numpy as np

PROB_TOL = 1e-9


def as_float_array(a, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_simplex(arr: np.ndarray, name: str, tol: float = PROB_TOL) -> np.ndarray:
    """Every slice along the last axis must be a probability vector."""
    if np.any(arr < -tol):
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name}{list(where)} sums to {float(sums[where]):.12g}, expected 1")
    return np.maximum(arr, 0.0)


def check_unit_interval(arr: np.ndarray, name: str) -> np.ndarray:
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must take values in [0, 1]")
    return arr


def check_index_array(a, upper: int, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise ValueError(f"{name} must hold integer ids")
        arr = arr.astype(np.int64)
    arr = arr.astype(np.int64, copy=False)
    if arr.size and (arr.min() < 0 or arr.max() >= upper):
        raise ValueError(f"{name} must lie in [0, {upper})")
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr
