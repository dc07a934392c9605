import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacreach.errors import InvalidSpec, MixedVariant, OutOfBounds, SpaceMismatch, UnknownLabel
from pacreach.space import (
    BoxSpace,
    CategoricalSpace,
    ball_cover,
    bin_of,
    covering_number,
    space_from_dict,
)


def test_covering_number_examples():
    assert covering_number(BoxSpace((0,), (0.4,), 0.05)) == 8
    assert covering_number(CategoricalSpace(("even", "odd"))) == 2
    assert covering_number(BoxSpace((0, 0), (1, 1), 0.1)) == 100


def test_truncated_last_cell_counts():
    sp = BoxSpace((0,), (1.05,), 0.1)
    assert sp.n_bins == 11
    assert sp.bin_of(1.05) == 10
    assert sp.cell(10) == ((1.0,), (1.05,))


@pytest.mark.parametrize("y,b", [(0.0, 0), (1.0, 9), (0.35, 3), (0.1, 1), (0.3, 3), (0.7, 7)])
def test_bin_of_examples(y, b):
    assert bin_of(BoxSpace((0,), (1,), 0.1), y) == b


def test_bin_of_row_major():
    sp = BoxSpace((0, 0), (1, 1), 0.1)
    assert sp.bin_of((0.0, 0.95)) == 9
    assert sp.bin_of((0.15, 0.0)) == 10
    assert sp.unravel(sp.bin_of((0.55, 0.25))) == (5, 2)


def test_bin_of_errors():
    sp = BoxSpace((0,), (1,), 0.1)
    with pytest.raises(OutOfBounds) as ei:
        sp.bin_of(1.2)
    assert ei.value.dimension == 0 and ei.value.value == 1.2
    with pytest.raises(OutOfBounds):
        sp.bin_of(float("nan"))
    with pytest.raises(MixedVariant):
        sp.bin_of("a")
    with pytest.raises(SpaceMismatch):
        sp.bin_of((0.1, 0.2))
    cat = CategoricalSpace(("even", "odd", "error"))
    assert cat.bin_of("error") == 2
    with pytest.raises(UnknownLabel):
        cat.bin_of("three")
    with pytest.raises(MixedVariant):
        cat.bin_of((0.2,))


def test_clip_mode():
    sp = BoxSpace((0,), (1,), 0.1, clip=True)
    assert sp.bin_of(-3) == 0 and sp.bin_of(7) == 9


@pytest.mark.parametrize(
    "lo,hi,gamma",
    [((0,), (0,), 0.1), ((1,), (0,), 0.1), ((0,), (1,), 0.0), ((0,), (1,), -1), ((0, 0), (1,), 0.1)],
)
def test_invalid_box(lo, hi, gamma):
    with pytest.raises(InvalidSpec):
        BoxSpace(lo, hi, gamma)


def test_invalid_categorical():
    with pytest.raises(InvalidSpec):
        CategoricalSpace(())
    with pytest.raises(InvalidSpec):
        CategoricalSpace(("a", "a"))


def test_roundtrip_dict():
    for sp in (BoxSpace((0, -1), (1, 1), 0.25), CategoricalSpace(("x", "y"))):
        assert space_from_dict(sp.to_dict()) == sp
    with pytest.raises(InvalidSpec):
        space_from_dict({"kind": "sphere"})


def test_bins_in_region():
    sp = BoxSpace((0,), (1,), 0.05)
    assert sp.bins_in_region((0,), (0.4,)) == frozenset(range(8))
    assert sp.bins_in_region((0.01,), (0.02,)) == frozenset({0})
    assert sp.bins_in_region((0.5,), (0.4,)) == frozenset()
    sq = BoxSpace((0, 0), (1, 1), 0.5)
    assert sq.bins_in_region((0, 0), (0.5, 1)) == frozenset({0, 1})


def test_ball_cover_examples():
    c = ball_cover([0.5], 0.1)
    assert c.contains(0.59) and not c.contains(0.61)
    empty = ball_cover([], 0.1)
    assert len(empty) == 0 and not empty.contains(0.0)
    two = ball_cover([0.1, 0.12], 0.05)
    (a, b), = two.intervals()
    assert math.isclose(a, 0.05) and math.isclose(b, 0.17)
    with pytest.raises(MixedVariant):
        ball_cover([0.1, "a"], 0.1)
    assert len(ball_cover([0.3, 0.3, 0.4], 0.1)) == 2


boxes = st.tuples(
    st.floats(-10, 10, allow_nan=False),
    st.floats(0.01, 10),
    st.floats(0.005, 3),
)


@given(boxes, st.floats(0, 1))
def test_cell_contains_point(box, frac):
    lo, width, gamma = box
    sp = BoxSpace((lo,), (lo + width,), gamma)
    y = min(lo + frac * width, lo + width)
    b = sp.bin_of(y)
    assert 0 <= b < sp.n_bins
    (cl,), (cu,) = sp.cell(b)
    tol = 1e-9 * max(1.0, abs(y))
    assert cl - tol <= y <= cu + tol


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.05, 1.0))
def test_covering_number_matches_fine_grid(cx, cy, gamma):
    # boxes whose sides are fractional multiples of gamma
    sp = BoxSpace((0.0, 0.0), (cx * gamma * 0.93, cy * gamma * 1.0), gamma)
    xs = np.linspace(0, sp.hi[0], 4 * cx * 3 + 1)
    ys = np.linspace(0, sp.hi[1], 4 * cy * 3 + 1)
    seen = {sp.bin_of((x, y)) for x in xs for y in ys}
    assert len(seen) == covering_number(sp)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0.01, 0.3), st.floats(0, 1))
def test_ball_cover_members_are_near_samples(samples, gamma, q):
    c = ball_cover(samples, gamma)
    near = min(abs(q - s) for s in samples) <= gamma
    assert c.contains(q) == near or math.isclose(min(abs(q - s) for s in samples), gamma, rel_tol=1e-9)
