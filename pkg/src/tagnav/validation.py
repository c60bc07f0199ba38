"""Input validation helpers used by the estimators and the functional API."""

import math
import numbers

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyTrajectoryError,
    InvalidParameterError,
    NonFiniteError,
)


def check_finite(*values, what="input"):
    for v in values:
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"{what} contains NaN or Inf")


def check_positive(value, name, *, allow_zero=False):
    if not isinstance(value, numbers.Real) or not math.isfinite(value):
        raise InvalidParameterError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidParameterError(f"{name} must be {bound}, got {value!r}")
    return float(value)


def check_probability(value, name):
    if not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidParameterError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise InvalidParameterError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_point_sequence(points, name="points"):
    """Coerce a point sequence to a finite ``(n, d)`` float array, ``n >= 1``."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise EmptyTrajectoryError(f"{name} must be a non-empty sequence of points")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return arr


def check_paired_sequences(a, b):
    a = check_point_sequence(a, "A")
    b = check_point_sequence(b, "B")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return a, b
