"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .errors import InvalidArgumentError, InvalidParameterError


def check_increments(dy, n_steps=None, name="dy"):
    """Return ``dy`` as a finite 1-D float64 array."""
    try:
        arr = check_array(dy, ensure_2d=False, dtype=np.float64, ensure_all_finite=True,
                          input_name=name, ensure_min_samples=1)
    except ValueError as exc:
        raise InvalidArgumentError(str(exc)) from exc
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n_steps is not None and arr.shape[0] != n_steps:
        raise InvalidArgumentError(f"{name} has {arr.shape[0]} entries, expected {n_steps}")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise InvalidParameterError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_count(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise InvalidParameterError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
