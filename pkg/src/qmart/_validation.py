"""Input validation helpers shared by the numerical modules and estimators."""

from __future__ import annotations

import numbers

import numpy as np


def check_scalar(value, name, *, min_val=None, max_val=None, strict=False):
    """Return ``value`` as a finite float, raising ``ValueError`` on bad input.

    ``strict`` makes ``min_val`` an exclusive bound.
    """
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if min_val is not None:
        if strict and value <= min_val:
            raise ValueError(f"{name} must be > {min_val}, got {value}")
        if not strict and value < min_val:
            raise ValueError(f"{name} must be >= {min_val}, got {value}")
    if max_val is not None and value > max_val:
        raise ValueError(f"{name} must be <= {max_val}, got {value}")
    return value


def check_int(value, name, *, min_val=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if min_val is not None and value < min_val:
        raise ValueError(f"{name} must be >= {min_val}, got {value}")
    return value


def check_samples(values, n, name, *, dtype=float, positive=False):
    """Validate a per-node sample array of length ``n``."""
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(n, arr, dtype=dtype)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{name} has a nonfinite sample at node {bad}")
    if positive and np.any(arr <= 0):
        bad = int(np.flatnonzero(arr <= 0)[0])
        raise ValueError(f"{name} must be strictly positive; node {bad} holds {arr[bad]}")
    return arr


def check_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError(f"grid mismatch: {a.grid} vs {b.grid}")
