"""Input validation helpers in the style of ``sklearn.utils.validation``."""

import numbers

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidArgumentError, InvalidDataError


def check_cloud(points, name="cloud"):
    """Coerce ``points`` to a finite 2-D float array with at least one row.

    1-D input is read as n points on the line.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    try:
        arr = check_array(arr, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True)
    except ValueError as exc:
        raise InvalidDataError(f"{name}: {exc}") from exc
    return arr


def check_k(k, *sizes):
    if not isinstance(k, numbers.Integral) or k < 1:
        raise InvalidArgumentError(f"k must be a positive integer, got {k!r}")
    for n in sizes:
        if k >= n:
            raise InvalidArgumentError(f"k={k} requires clouds with more than {k} points, got {n}")
    return int(k)


def check_probability(value, name, *, open_interval=True):
    value = float(value)
    ok = 0.0 < value < 1.0 if open_interval else 0.0 <= value <= 1.0
    if not ok:
        raise InvalidArgumentError(f"{name} must lie in (0, 1), got {value}")
    return value


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or value < 1:
        raise InvalidArgumentError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
