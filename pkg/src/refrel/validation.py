"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError


def check_array(x, ndim=None, last_dim=None, name="X", dtype=np.float64):
    """Convert ``x`` to a float array and verify its rank / trailing size."""
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if last_dim is not None and (arr.ndim == 0 or arr.shape[-1] != last_dim):
        raise ShapeMismatchError(
            f"{name} last dimension must be {last_dim}, got shape {arr.shape}"
        )
    return arr


def check_finite(x, name="array"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return x


def check_binary(y, name="targets"):
    arr = np.asarray(y, dtype=np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr


def check_probability(p, name="probability"):
    if not isinstance(p, numbers.Real) or not (0.0 <= float(p) <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1], got {p!r}")
    return float(p)


def check_positive_int(n, name):
    if not isinstance(n, numbers.Integral) or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def check_same_length(a, b, names=("X", "y")):
    if len(a) != len(b):
        raise ShapeMismatchError(
            f"{names[0]} and {names[1]} have different lengths ({len(a)} != {len(b)})"
        )
