"""Input validation helpers used at public entry points."""
from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def check_array(x, ndim: int, name: str = "array", dtype=np.float32) -> np.ndarray:
    """Coerce ``x`` to a finite float array with exactly ``ndim`` dimensions."""
    arr = np.asarray(x)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def check_binary(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    bad = (arr != 0) & (arr != 1)
    if bad.any():
        raise ContractError(f"{name} must be binary (0/1); found value {arr[bad].flat[0]!r}")
    return arr.astype(bool)


def check_same_shape(a, b, what: str = "inputs") -> None:
    sa, sb = np.shape(a), np.shape(b)
    if sa != sb:
        raise ShapeError(f"{what} must have identical shapes, got {sa} and {sb}")


def check_divisible(spatial, factors, name: str = "input") -> None:
    for n, f in zip(spatial, factors):
        if n % f:
            raise ShapeError(f"{name} spatial dims {tuple(spatial)} must be divisible by {tuple(factors)}")
