"""Input validation helpers shared by the estimators and the functional API."""

import numbers

import numpy as np

from .exceptions import GammaOutOfRange


def check_positive_int(value, name, allow_zero=False):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {value}")
    return value


def check_positive_float(value, name, allow_zero=False):
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be finite and {bound}, got {value}")
    return value


def as_finite_vector(x, name, size=None):
    """Return ``x`` as a 1-D float64 array, rejecting NaN/inf and wrong length."""
    arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name} must have length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def stability_limit(mu=None, lipschitz=None):
    """Upper end of the admissible step-size window, or inf if unknown."""
    limit = np.inf
    if lipschitz is not None:
        limit = min(limit, 1.0 / lipschitz)
    if mu is not None:
        limit = min(limit, 2.0 / mu)
    return limit


def check_step_size(gamma, mu=None, lipschitz=None, name="gamma"):
    gamma = check_positive_float(gamma, name)
    limit = stability_limit(mu, lipschitz)
    if not gamma < limit:
        raise GammaOutOfRange(
            f"{name}={gamma} outside stability window (0, {limit:.6g})"
        )
    return gamma
