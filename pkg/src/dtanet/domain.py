"""Response-range applicability domain.

The reliable region is the open interval
``(min - 0.15 * range, max + 0.15 * range)`` computed from the training
responses, so its width is exactly 1.3x the training range and every
training response sits strictly inside. When the true response of a query
is unknown, the predicted value is checked instead. Boundary hits count as
outside (the interval is open), which matters when responses are remapped
onto sentinel values. For multi-task models a range is fitted per task.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ADRange", "DomainError", "fit_ad", "check_ad", "fit_ad_per_task"]

_PADDING = 0.15


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ADRange:
    lower: float
    upper: float
    source_min: float
    source_max: float
    range_size: float


def fit_ad(values) -> ADRange:
    """Fit the reliable response interval from training responses."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2 or np.unique(values).size < 2:
        raise DomainError(
            "applicability domain needs at least 2 distinct response values")
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo
    return ADRange(lower=lo - _PADDING * span, upper=hi + _PADDING * span,
                   source_min=lo, source_max=hi, range_size=span)


def check_ad(ad: ADRange, value: float) -> bool:
    """True when ``value`` lies strictly inside the fitted interval."""
    return ad.lower < value < ad.upper


def fit_ad_per_task(y: np.ndarray, w: np.ndarray) -> list[ADRange | None]:
    """One range per task; ``None`` for tasks without 2 distinct responses."""
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    ranges: list[ADRange | None] = []
    for t in range(y.shape[1]):
        observed = y[w[:, t] > 0, t]
        try:
            ranges.append(fit_ad(observed))
        except DomainError:
            ranges.append(None)
    return ranges
