"""Coverage and calibration metrics for controllability reports."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput, InvalidParameter, SpaceMismatch


class LengthMismatch(InvalidParameter):
    pass


def coverage(controllable: Iterable[int], space) -> float:
    """Fraction of the space's bins inside the controllable set."""
    bins = set(controllable)
    n = space.n_bins
    bad = [b for b in bins if not (isinstance(b, (int, np.integer)) and 0 <= b < n)]
    if bad:
        raise SpaceMismatch(f"bins {sorted(bad)[:5]} are not valid for a space with N={n}")
    return len(bins) / n


def _pair(u, y, min_len):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape or u.ndim != 1:
        raise LengthMismatch(f"paired inputs need equal 1-d shapes, got {u.shape} and {y.shape}")
    if len(u) < min_len:
        raise LengthMismatch(f"need at least {min_len} pairs, got {len(u)}")
    return u, y


def _corr(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    sa = math.sqrt(float(a @ a))
    sb = math.sqrt(float(b @ b))
    if sa == 0 or sb == 0:
        raise DegenerateInput("correlation undefined for a constant vector")
    return float(np.clip((a @ b) / (sa * sb), -1.0, 1.0))


def pearson_r(u, y) -> float:
    return _corr(*_pair(u, y, 2))


def spearman_rho(u, y) -> float:
    """Rank correlation; average ranks and a Pearson fallback when there are ties."""
    u, y = _pair(u, y, 2)
    ru, ry = rankdata(u), rankdata(y)
    n = len(u)
    if len(np.unique(u)) == n and len(np.unique(y)) == n:
        # integer ranks: the rank-difference form is exact
        d2 = int(np.sum((ru - ry) ** 2))
        return 1.0 - 6.0 * d2 / (n * (n * n - 1))
    return _corr(ru, ry)


def mae(u, y) -> float:
    u, y = _pair(u, y, 1)
    return float(np.mean(np.abs(u - y)))


def accuracy(expected, got) -> float:
    expected, got = list(expected), list(got)
    if len(expected) != len(got) or not expected:
        raise LengthMismatch("accuracy needs equal, non-empty label lists")
    return sum(a == b for a, b in zip(expected, got)) / len(expected)


def _maybe(fn, u, y) -> Optional[float]:
    try:
        return fn(u, y)
    except DegenerateInput:
        return None


@dataclass
class CalibrationRecord:
    """Requested values against final outputs for one initial state.

    Correlations are ``None`` when either side is constant, so reports show
    the metric as unavailable instead of as zero.
    """

    x0: object
    requests: list
    outputs: list

    def __post_init__(self):
        if len(self.requests) != len(self.outputs):
            raise LengthMismatch("requests and outputs differ in length")

    @property
    def rho(self) -> Optional[float]:
        return _maybe(spearman_rho, self.requests, self.outputs) if len(self.requests) >= 2 else None

    @property
    def r(self) -> Optional[float]:
        return _maybe(pearson_r, self.requests, self.outputs) if len(self.requests) >= 2 else None

    @property
    def mae(self) -> Optional[float]:
        return mae(self.requests, self.outputs) if self.requests else None

    def as_rows(self) -> list:
        return [("spearman_rho", self.rho), ("pearson_r", self.r), ("mae", self.mae)]


def summarize(values) -> dict:
    """Median and quartiles over the available (non-None) values."""
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return {"n": 0, "q1": None, "median": None, "q3": None}
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return {"n": int(vals.size), "q1": float(q1), "median": float(med), "q3": float(q3)}
