"""Argument checks and the error types shared across the package."""
import numbers

import numpy as np


class NumericalError(RuntimeError):
    """Base class for solver failures (CLI exit code 3)."""


class SingularPointError(ValueError):
    pass


class QuadratureError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class BracketError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class InstabilityError(NumericalError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


SUPPORTED_DIMENSIONS = (1, 2, 3, 4, 5)


def check_dimension(d, min_d=1):
    if isinstance(d, bool) or not isinstance(d, numbers.Integral):
        raise TypeError(f"dimension must be an integer, got {d!r}")
    d = int(d)
    if d not in SUPPORTED_DIMENSIONS:
        raise ValueError(f"dimension must be one of {SUPPORTED_DIMENSIONS}, got {d}")
    if d < min_d:
        raise ValueError(f"this operation needs d >= {min_d}, got d={d}")
    return d


def check_scalar(x, name, positive=False, nonneg=False, finite=True):
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {x!r}")
    x = float(x)
    if finite and not np.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x}")
    if positive and not x > 0:
        raise ValueError(f"{name} must be > 0, got {x}")
    if nonneg and not x >= 0:
        raise ValueError(f"{name} must be >= 0, got {x}")
    return x


def check_int(n, name, minimum=None):
    if isinstance(n, bool) or not isinstance(n, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {n!r}")
    n = int(n)
    if minimum is not None and n < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {n}")
    return n


def as_float_array(x, name, nonneg=False, positive=False):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if nonneg and np.any(arr < 0):
        raise ValueError(f"{name} must be >= 0")
    if positive and np.any(arr <= 0):
        raise ValueError(f"{name} must be > 0")
    return arr
