"""Small argument checks shared by the public functions."""
import math
import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import DomainError


def check_count(value, name, minimum=0):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise DomainError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise DomainError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_real(value, name, low=None, high=None, low_open=False, high_open=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value}")
    if low is not None and (value < low or (low_open and value == low)):
        op = ">" if low_open else ">="
        raise DomainError(f"{name} must be {op} {low}, got {value}")
    if high is not None and (value > high or (high_open and value == high)):
        op = "<" if high_open else "<="
        raise DomainError(f"{name} must be {op} {high}, got {value}")
    return value


def check_probability_vector(probs, name="probs", atol=1e-10):
    """Validate a probability vector, clipping round-off negatives to zero."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise DomainError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(probs)):
        raise DomainError(f"{name} contains non-finite entries")
    if probs.min() < -atol or probs.max() > 1 + atol:
        raise DomainError(f"{name} entries must lie in [0, 1]")
    total = probs.sum()
    if abs(total - 1.0) > atol:
        raise DomainError(f"{name} must sum to 1 (got {total!r})")
    return np.clip(probs, 0.0, 1.0)


def check_click_values(X, n_pixels):
    """Return per-trial click numbers from ``X`` as a 1-D int array."""
    X = check_array(X, ensure_2d=False, dtype=None)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise DomainError("click data must be a single column")
        X = X[:, 0]
    if not np.all(np.equal(np.mod(X, 1), 0)):
        raise DomainError("click numbers must be integers")
    X = X.astype(np.int64)
    if X.min() < 0 or X.max() > n_pixels:
        raise DomainError(f"click numbers must lie in [0, {n_pixels}]")
    return X


def check_areas(X):
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise DomainError("pulse areas must be a single column")
        X = X[:, 0]
    return X
