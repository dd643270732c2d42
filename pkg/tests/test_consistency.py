import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from obq.consistency import (
    DegenerateQualityError,
    LiteConfig,
    MetricKind,
    NoPixelsError,
    PixelSet,
    activated_pixels,
    batch_quality,
    integrate,
    integrate_values,
    lite_quality,
    lite_select,
    lite_subsample,
    localized_heatmap,
    quality,
    self_encoding,
)
from obq.geometry import OrientedBox
from obq.heatmap import Grid, Heatmap, global_label

ALL = list(MetricKind)


def _pairs(ps):
    return list(zip(ps.rows.tolist(), ps.cols.tolist()))


def test_activated_pixels_block():
    grid = Grid(8, 8)
    ps = activated_pixels(OrientedBox(1, 0.5, 3, 2, 0), grid)
    assert len(ps) == 6
    assert _pairs(ps) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_activated_pixels_boundary_inclusive():
    ps = activated_pixels(OrientedBox(5.0, 5.0, 2.0, 2.0, 0), Grid(12, 12))
    assert _pairs(ps) == [(r, c) for r in (4, 5, 6) for c in (4, 5, 6)]


def test_activated_pixels_enumeration_oracle():
    grid = Grid(30, 25, -3.0, -2.0, 0.4)
    box = OrientedBox(2.0, 2.5, 5.0, 2.2, 0.6)
    ps = activated_pixels(box, grid)
    expected = []
    for r in range(grid.height):
        for c in range(grid.width):
            x, y = grid.origin_x + c * grid.stride, grid.origin_y + r * grid.stride
            u = (x - box.cx) * math.cos(box.theta) + (y - box.cy) * math.sin(box.theta)
            v = -(x - box.cx) * math.sin(box.theta) + (y - box.cy) * math.cos(box.theta)
            if abs(u) <= box.w / 2 + 1e-9 and abs(v) <= box.h / 2 + 1e-9:
                expected.append((r, c))
    assert _pairs(ps) == expected


def test_activated_pixels_off_grid():
    with pytest.raises(NoPixelsError, match="no pixel centers"):
        activated_pixels(OrientedBox(100, 100, 2, 2), Grid(10, 10))
    # overlaps the grid rectangle but straddles no pixel center
    with pytest.raises(NoPixelsError):
        activated_pixels(OrientedBox(1.5, 1.5, 0.5, 0.5), Grid(10, 10))


def test_localized_heatmap():
    grid = Grid(4, 3)
    h = Heatmap(grid, np.arange(12, dtype=float).reshape(3, 4) / 12)
    full = PixelSet(grid, *np.nonzero(np.ones(grid.shape)))
    assert np.array_equal(localized_heatmap(h, full).values, h.values)
    one = PixelSet(grid, np.array([1]), np.array([2]))
    out = localized_heatmap(h, one).values
    assert np.count_nonzero(out) == 1 and out[1, 2] == h.values[1, 2]
    zero = Heatmap(grid, np.zeros(grid.shape))
    assert not localized_heatmap(zero, full).values.any()


def test_self_encoding():
    grid = Grid(9, 9, -4, -4, 1.0)
    box = OrientedBox(0, 0, 4, 8, 0)
    ps = activated_pixels(box, grid)
    f = self_encoding(box, ps, grid)
    assert f.values[4, 4] == 1.0
    assert f.values[4, 5] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert np.all(f.values[ps.rows, ps.cols] > 0)
    mask = np.ones(grid.shape, bool)
    mask[ps.rows, ps.cols] = False
    assert not f.values[mask].any()
    # prediction equal to the single GT: self-encoding equals the localized label
    h_i = localized_heatmap(global_label([box], grid), ps)
    assert np.array_equal(f.values, h_i.values)


def test_integrate_identical_is_one():
    f = np.array([0.2, 0.9, 0.5, 1.0])
    for m in ALL:
        assert integrate_values(f, f.copy(), m) == 1.0


def test_integrate_zero_localized_heatmap():
    f = np.array([0.2, 0.9, 0.5, 1.0])
    h = np.zeros(4)
    assert integrate_values(h, f, MetricKind.VIOU) == 0.0
    assert integrate_values(h, f, MetricKind.MAE) == pytest.approx(1 - f.mean())
    assert integrate_values(h, f, MetricKind.KLD) == 0.0
    with pytest.raises(DegenerateQualityError, match="degenerate quality"):
        integrate_values(h, np.zeros(4), MetricKind.VIOU)


def test_integrate_heatmap_wrapper():
    grid = Grid(3, 1)
    ps = PixelSet(grid, np.array([0, 0]), np.array([0, 2]))
    h = Heatmap(grid, np.array([[0.5, 0.9, 0.2]]))
    f = Heatmap(grid, np.array([[0.25, 0.1, 0.4]]))
    # volume IoU over the two masked pixels: (0.25 + 0.2) / (0.5 + 0.4)
    assert integrate(h, f, ps, MetricKind.VIOU) == pytest.approx(0.5)
    assert integrate(h, f, ps, MetricKind.MAE) == pytest.approx(1 - (0.25 + 0.2) / 2)
    L = np.array([0.5, 0.2]) / 0.7
    G = np.array([0.25, 0.4]) / 0.65
    assert integrate(h, f, ps, MetricKind.KLD) == pytest.approx(math.exp(-np.sum(L * np.log(L / G))))


def test_kld_skips_zero_mass_pixels():
    h = np.array([0.0, 0.5, 0.5])
    f = np.array([0.8, 0.5, 0.5])
    # the normalized localized heatmap equals the normalized self-encoding on its support
    L = np.array([0.5, 0.5])
    G = np.array([0.5, 0.5]) / 1.8
    assert integrate_values(h, f, MetricKind.KLD) == pytest.approx(math.exp(-np.sum(L * np.log(L / G))))


def test_kld_asymmetric():
    a = np.array([0.9, 0.1, 0.5])
    b = np.array([0.3, 0.6, 0.2])
    assert integrate_values(a, b, MetricKind.KLD) != pytest.approx(integrate_values(b, a, MetricKind.KLD), abs=1e-6)


unit = arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(unit, st.data())
def test_metric_range_and_symmetry(h, data):
    f = data.draw(arrays(np.float64, len(h), elements=st.floats(1e-3, 1)))
    for m in ALL:
        s = integrate_values(h, f, m)
        assert 0.0 <= s <= 1.0
    for m in (MetricKind.VIOU, MetricKind.MAE):
        assert integrate_values(h, f, m) == pytest.approx(integrate_values(f, h, m), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(unit, st.data())
def test_viou_monotone_under_shrinking(h, data):
    # only where h <= f: shrinking an h above f moves it toward f and raises the score
    f = data.draw(arrays(np.float64, len(h), elements=st.floats(1e-3, 1)))
    h = np.minimum(h, f)
    factors = data.draw(arrays(np.float64, len(h), elements=st.floats(0, 1)))
    assert integrate_values(h * factors, f, MetricKind.VIOU) <= integrate_values(h, f, MetricKind.VIOU) + 1e-12


def test_viou_not_monotone_above_self_encoding():
    f = np.array([0.5])
    assert integrate_values(np.array([0.5]), f, MetricKind.VIOU) > integrate_values(np.array([1.0]), f, MetricKind.VIOU)


def test_quality_perfect_match():
    box = OrientedBox(0, 0, 10, 4, 0.4, score=0.7)
    grid = Grid.covering([box], 0.05 * 4, anchor=(0, 0))
    h = global_label([box], grid)
    for m in ALL:
        r = quality(box, h, m, box_id="a")
        assert r.q == 1.0
        assert r.cq == pytest.approx(0.7, abs=1e-12)
        assert r.box_id == "a" and r.metric is m


def test_quality_cq_product():
    box = OrientedBox(0.3, 0, 10, 4, 0.0, score=0.82)
    h = global_label([OrientedBox(0, 0, 10, 4, 0.0)], Grid.covering([box], 0.2, anchor=(0, 0)))
    r = quality(box, h, MetricKind.VIOU)
    assert abs(r.cq - r.cls * r.q) < 1e-12
    unscored = quality(OrientedBox(0.3, 0, 10, 4), h, MetricKind.VIOU)
    assert unscored.cq is None and unscored.cls is None and "cq" not in unscored.to_dict()
    full = quality(box.with_score(1.0), h, MetricKind.VIOU)
    assert full.cq == full.q


def test_quality_off_grid():
    h = Heatmap(Grid(5, 5), np.zeros((5, 5)))
    with pytest.raises(NoPixelsError):
        quality(OrientedBox(50, 50, 2, 2), h, MetricKind.VIOU)
    rep = batch_quality([OrientedBox(50, 50, 2, 2), OrientedBox(2, 2, 2, 2)], h, "kld")
    assert rep[0].q is None and rep[0].error == "box covers no pixel centers"
    assert rep[1].q == 0.0


def test_lite_config_validation():
    assert LiteConfig() == LiteConfig(1500, 0.5)
    with pytest.raises(ValueError):
        LiteConfig(0)
    with pytest.raises(ValueError):
        LiteConfig("some")
    with pytest.raises(ValueError):
        LiteConfig(10, 0.0)
    with pytest.raises(ValueError):
        LiteConfig(10, 1.5)


def _three_box_heatmap():
    grid = Grid(3, 1)
    h = Heatmap(grid, np.array([[0.9, 0.5, 0.1]]))
    boxes = [OrientedBox(x, 0, 0.5, 0.5) for x in (0.0, 1.0, 2.0)]
    return boxes, h


def test_lite_select_ranking():
    boxes, h = _three_box_heatmap()
    sel, byp = lite_select(boxes, h, LiteConfig(2, 1.0))
    assert sel == [0, 1]
    assert byp == [(2, pytest.approx(0.1))]
    sel, byp = lite_select(boxes[::-1], h, LiteConfig(1, 1.0))
    assert sel == [2] and [i for i, _ in byp] == [0, 1]
    assert lite_select(boxes, h, LiteConfig("all", 1.0))[1] == []


def test_lite_select_ties_prefer_lower_index():
    grid = Grid(2, 1)
    h = Heatmap(grid, np.array([[0.4, 0.4]]))
    boxes = [OrientedBox(1, 0, 0.5, 0.5), OrientedBox(0, 0, 0.5, 0.5)]
    assert lite_select(boxes, h, LiteConfig(1, 1.0))[0] == [0]


def test_lite_quality_bypass_records():
    boxes, h = _three_box_heatmap()
    reports = lite_quality(boxes, h, MetricKind.VIOU, LiteConfig(1, 1.0))
    assert [r.lite_bypass for r in reports] == [False, True, True]
    assert reports[2].q == pytest.approx(0.1)
    assert reports[1].to_dict()["lite_bypass"] is True


@pytest.mark.parametrize("n, gamma, kept", [(10, 0.5, [0, 2, 4, 6, 8]), (1, 0.3, [0]), (1, 1.0, [0]), (7, 1.0, list(range(7)))])
def test_lite_subsample_examples(n, gamma, kept):
    grid = Grid(n, 1)
    ps = PixelSet(grid, np.zeros(n, int), np.arange(n))
    out = lite_subsample(ps, gamma, seed=123)
    assert out.cols.tolist() == kept


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 500), st.floats(0.01, 1.0))
def test_lite_subsample_count(n, gamma):
    grid = Grid(n, 1)
    ps = PixelSet(grid, np.zeros(n, int), np.arange(n))
    out = lite_subsample(ps, gamma)
    assert len(out) == math.ceil(round(gamma * n, 9))
    assert np.all(np.diff(out.cols) > 0)


def test_lite_all_matches_full_bitwise():
    gts = [OrientedBox(20, 20, 16, 8, 0.3), OrientedBox(45, 30, 12, 12, -0.8)]
    grid = Grid(64, 50)
    h = global_label(gts, grid)
    preds = [
        OrientedBox(21, 19, 15, 9, 0.35, score=0.9),
        OrientedBox(44, 31, 13, 10, -0.7, score=0.4),
        OrientedBox(30, 25, 20, 6, 0.0),
    ]
    for m in ALL:
        full = [quality(b, h, m, i) for i, b in enumerate(preds)]
        assert lite_quality(preds, h, m, LiteConfig("all", 1.0)) == full
        assert batch_quality(preds, h, m, threads=3) == full
