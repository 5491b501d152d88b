"""Log-domain probability arithmetic shared by all decoding code.

Probabilities are stored as natural logarithms. Probability zero is the
sentinel ``LOG_ZERO`` (negative infinity): it absorbs log-domain products
and is the identity of log-domain sums, so callers need no special casing.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

LOG_ZERO = float("-inf")
LOG_ONE = 0.0


def log_add(a: float, b: float) -> float:
    """Return ``log(exp(a) + exp(b))`` without leaving the log domain.

    Stable for operands of any magnitude; ``LOG_ZERO`` is the identity.
    """
    if a == LOG_ZERO:
        return b
    if b == LOG_ZERO:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def log_sum(values: Iterable[float]) -> float:
    """Fold :func:`log_add` over ``values``. The empty sum is ``LOG_ZERO``."""
    total = LOG_ZERO
    for value in values:
        total = log_add(total, value)
    return total


def log_sum_array(values: np.ndarray, axis: int | None = None):
    """Log-sum-exp reduction over a numpy array.

    Slices that contain only ``LOG_ZERO`` reduce to ``LOG_ZERO`` instead of
    producing NaN. Returns a float when the reduction removes every axis.
    """
    values = np.asarray(values, dtype=np.float64)
    if axis is None:
        values = values.ravel()
        axis = 0
    if values.shape[axis] == 0:
        shape = list(values.shape)
        del shape[axis % values.ndim]
        out = np.full(shape, LOG_ZERO)
        return out if out.ndim else float(out)
    peak = np.max(values, axis=axis, keepdims=True)
    anchor = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(values - anchor).sum(axis=axis)) + np.squeeze(anchor, axis=axis)
    return out if out.ndim else float(out)


def log_normalize(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift ``values`` so every slice along ``axis`` log-sums to zero."""
    values = np.asarray(values, dtype=np.float64)
    total = log_sum_array(values, axis=axis)
    return values - np.expand_dims(total, axis)
