"""Measurement spaces and their fixed quantization grids.

A measurement is either a label (categorical spaces) or a point in a
bounded box.  Boxes are cut into an axis-aligned grid of side ``gamma``
anchored at ``lo``; the last cell on each axis may be truncated by ``hi``
and still counts as a full bin.  Bins never depend on observed samples,
which is what makes reachable sets from different initial states
comparable by plain set intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import InvalidSpec, MixedVariant, OutOfBounds, SpaceMismatch, UnknownLabel

ERROR_LABEL = "error"

Point = tuple
Measurement = Union[str, Point]

# relative slack used when snapping grid arithmetic onto integers
_SNAP = 1e-9


def _snap(x: float) -> float:
    r = round(x)
    if abs(x - r) <= _SNAP * max(1.0, abs(x)):
        return float(r)
    return x


def _ceil(x: float) -> int:
    return int(math.ceil(_snap(x)))


@dataclass(frozen=True)
class CategoricalSpace:
    labels: tuple

    kind = "categorical"

    def __post_init__(self):
        labels = tuple(str(l) for l in self.labels)
        if not labels:
            raise InvalidSpec("categorical space needs at least one label")
        if len(set(labels)) != len(labels):
            raise InvalidSpec(f"duplicate labels in {labels!r}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_index", {l: i for i, l in enumerate(labels)})

    @property
    def n_bins(self) -> int:
        return len(self.labels)

    def bin_of(self, y) -> int:
        if not isinstance(y, str):
            raise MixedVariant(f"categorical space got non-label measurement {y!r}")
        try:
            return self._index[y]
        except KeyError:
            raise UnknownLabel(y) from None

    def describe_bin(self, i: int) -> str:
        return self.labels[i]

    def to_dict(self) -> dict:
        return {"kind": "categorical", "labels": list(self.labels)}


@dataclass(frozen=True)
class BoxSpace:
    lo: tuple
    hi: tuple
    gamma: float
    clip: bool = False
    cells: tuple = field(init=False, repr=False)

    kind = "box"

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi) or not lo:
            raise InvalidSpec(f"lo/hi dimension mismatch: {lo} vs {hi}")
        if not all(a < b for a, b in zip(lo, hi)):
            raise InvalidSpec(f"need lo < hi on every axis, got lo={lo} hi={hi}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidSpec(f"gamma must be positive, got {self.gamma}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "gamma", float(self.gamma))
        cells = tuple(_ceil((b - a) / self.gamma) for a, b in zip(lo, hi))
        object.__setattr__(self, "cells", cells)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def n_bins(self) -> int:
        return math.prod(self.cells)

    def as_point(self, y) -> Point:
        if isinstance(y, str):
            raise MixedVariant(f"box space got label measurement {y!r}")
        pt = tuple(float(v) for v in np.atleast_1d(np.asarray(y, dtype=float)))
        if len(pt) != self.dim:
            raise SpaceMismatch(f"measurement has dimension {len(pt)}, space has {self.dim}")
        return pt

    def axis_index(self, axis: int, v: float) -> int:
        lo, hi = self.lo[axis], self.hi[axis]
        if not (lo <= v <= hi):
            if self.clip and not math.isnan(v):
                v = min(max(v, lo), hi)
            else:
                raise OutOfBounds(axis, v)
        i = math.floor(_snap((v - lo) / self.gamma))
        return min(i, self.cells[axis] - 1)

    def bin_of(self, y) -> int:
        pt = self.as_point(y)
        idx = [self.axis_index(a, v) for a, v in enumerate(pt)]
        return int(np.ravel_multi_index(idx, self.cells))

    def unravel(self, b: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(b, self.cells))

    def cell(self, b: int) -> tuple:
        """Return ``(lower, upper)`` corner vectors of bin ``b``."""
        idx = self.unravel(b)
        lower = tuple(l + i * self.gamma for l, i in zip(self.lo, idx))
        upper = tuple(min(l + (i + 1) * self.gamma, h) for l, h, i in zip(self.lo, self.hi, idx))
        return lower, upper

    def bins_in_region(self, lo, hi) -> frozenset:
        """Bins whose cells overlap the closed region [lo, hi] with positive volume."""
        lo = self.as_point(lo)
        hi = self.as_point(hi)
        ranges = []
        for a in range(self.dim):
            if lo[a] > hi[a]:
                return frozenset()
            first = math.floor(_snap((max(lo[a], self.lo[a]) - self.lo[a]) / self.gamma))
            last = _ceil((min(hi[a], self.hi[a]) - self.lo[a]) / self.gamma) - 1
            first = max(first, 0)
            last = min(last, self.cells[a] - 1)
            if lo[a] == hi[a]:
                # degenerate axis: the single cell holding the coordinate
                first = last = self.axis_index(a, lo[a])
            if last < first:
                return frozenset()
            ranges.append(range(first, last + 1))
        grid = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=0).reshape(self.dim, -1)
        return frozenset(int(b) for b in np.ravel_multi_index(tuple(grid), self.cells))

    def describe_bin(self, b: int) -> str:
        lower, upper = self.cell(b)
        return " x ".join(f"[{l:.6g},{u:.6g}]" for l, u in zip(lower, upper))

    def to_dict(self) -> dict:
        d = {"kind": "box", "lo": list(self.lo), "hi": list(self.hi), "gamma": self.gamma}
        if self.clip:
            d["clip"] = True
        return d


MeasurementSpace = Union[CategoricalSpace, BoxSpace]


def covering_number(space: MeasurementSpace) -> int:
    return space.n_bins


def bin_of(space: MeasurementSpace, y) -> int:
    return space.bin_of(y)


def space_from_dict(d: dict) -> MeasurementSpace:
    kind = d.get("kind")
    if kind == "categorical":
        return CategoricalSpace(tuple(d["labels"]))
    if kind == "box":
        return BoxSpace(tuple(d["lo"]), tuple(d["hi"]), float(d["gamma"]), bool(d.get("clip", False)))
    raise InvalidSpec(f"unknown space kind {kind!r}")


@dataclass(frozen=True)
class BallCover:
    """Union of closed infinity-norm balls of a common radius."""

    centers: np.ndarray
    radius: float

    def __len__(self):
        return len(self.centers)

    def contains(self, q) -> bool:
        if len(self.centers) == 0:
            return False
        q = np.atleast_1d(np.asarray(q, dtype=float))
        dist = np.max(np.abs(self.centers - q), axis=1)
        return bool(np.any(dist <= self.radius * (1 + 1e-12)))

    def intervals(self) -> list:
        """Merged covered intervals, 1-d covers only."""
        if self.centers.shape[1:] != (1,):
            raise SpaceMismatch("interval view is only defined for 1-d covers")
        spans = sorted((c - self.radius, c + self.radius) for c in self.centers[:, 0])
        merged = []
        for a, b in spans:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        return [(float(a), float(b)) for a, b in merged]


def ball_cover(samples: Iterable, gamma: float) -> BallCover:
    pts = []
    for s in samples:
        if isinstance(s, str):
            raise MixedVariant("ball covers need point measurements, got a label")
        pts.append(tuple(float(v) for v in np.atleast_1d(s)))
    if not pts:
        return BallCover(np.empty((0, 1)), float(gamma))
    if len({len(p) for p in pts}) != 1:
        raise SpaceMismatch("samples have mixed dimensions")
    centers = np.array(sorted(set(pts)), dtype=float)
    return BallCover(centers, float(gamma))
