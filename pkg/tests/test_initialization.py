import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oricorner.errors import EmptyMask
from oricorner.geom import Polygon, is_simple, signed_area
from oricorner.initialization import (C_SEM, FALLBACK_SCORE, SEMANTIC, Contour, CornerSet, InitConfig,
                                      augment_semantic, decode_corners, douglas_peucker, extract_contour,
                                      filter_corners, initialize, largest_component, order_corners, peak_cells,
                                      trace_boundary)
from oricorner.scenegen import SceneSpec, generate_polygons
from oricorner.targets import GridSize, encode

import oracles
from shapes import l_shape, square


def _corners(points, conf=1.0):
    pts = np.asarray(points, dtype=float)
    return CornerSet(pts, np.full(len(pts), conf), ["detected"] * len(pts))


# -- decoding -----------------------------------------------------------------------

def test_decode_square_round_trip():
    poly = square(2.3, 3.7, 4.1)
    r = encode(poly, GridSize(12, 12))
    c = decode_corners(r.heatmap, r.offsets)
    got = sorted(map(tuple, c.points))
    want = sorted(map(tuple, poly.vertices))
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_decode_empty_heatmap():
    c = decode_corners(np.zeros((8, 8)), np.zeros((8, 8, 2)))
    assert len(c) == 0


def test_nms_adjacent_cells():
    h = np.zeros((1, 2))
    h[0] = (0.9, 0.8)
    assert [tuple(c) for c in peak_cells(h, 0.5)] == [(0, 0)] == oracles.nms(h, 0.5)


def test_nms_tie_goes_to_smaller_index():
    h = np.zeros((3, 3))
    h[1, 1] = h[1, 2] = h[2, 1] = 0.7
    assert [tuple(c) for c in peak_cells(h, 0.5)] == [(1, 1)]


@given(st.integers(2, 6), st.integers(2, 6), st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5),
                                                                 st.sampled_from([0.5, 0.6, 0.9, 1.0])),
                                                       max_size=5))
def test_nms_agrees_with_oracle(rows, cols, peaks):
    h = np.zeros((rows, cols))
    for i, j, v in peaks:
        if i < rows and j < cols:
            h[i, j] = v
    got = [tuple(map(int, c)) for c in peak_cells(h, 0.5)]
    assert got == oracles.nms(h, 0.5)


@given(st.lists(st.floats(0, 1), min_size=16, max_size=16), st.floats(0.05, 0.95))
def test_nms_agrees_with_oracle_continuous(values, tau):
    h = np.array(values).reshape(4, 4)
    assert [tuple(map(int, c)) for c in peak_cells(h, tau)] == oracles.nms(h, tau)


# -- contour ---------------------------------------------------------------------------

def test_contour_block():
    mask = np.zeros((8, 8), bool)
    mask[2:5, 2:5] = True
    c = extract_contour(mask)
    want = [(2.5, 2.5), (3.5, 2.5), (4.5, 2.5), (4.5, 3.5), (4.5, 4.5), (3.5, 4.5), (2.5, 4.5), (2.5, 3.5)]
    assert [tuple(p) for p in c.points] == want
    cells = {(int(y - 0.5), int(x - 0.5)) for x, y in want}
    assert cells == oracles.exterior_boundary(mask)
    assert not c.degenerate
    assert np.all(np.diff(c.arclength) > 0)
    assert c.length == pytest.approx(8.0)


def test_contour_single_cell():
    mask = np.zeros((8, 8), bool)
    mask[3, 4] = True
    c = extract_contour(mask)
    assert [tuple(p) for p in c.points] == [(4.5, 3.5)]
    assert c.degenerate


def test_contour_largest_component_only():
    mask = np.zeros((10, 10), bool)
    mask[1:3, 1:3] = True
    mask[5:9, 4:9] = True
    c = extract_contour(mask)
    assert c.points[:, 1].min() == 5.5


def test_components_are_four_connected():
    mask = np.zeros((8, 8), bool)
    mask[1:3, 1:3] = True
    mask[3, 3] = True  # diagonal contact only
    assert largest_component(mask).sum() == 4


def test_contour_empty_mask():
    with pytest.raises(EmptyMask):
        extract_contour(np.zeros((8, 8), bool))


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.integers(1, 5), st.integers(1, 5)),
                min_size=1, max_size=5))
def test_contour_agrees_with_oracle(rects):
    mask = np.zeros((9, 9), bool)
    for r, c, h, w in rects:
        mask[r:r + h, c:c + w] = True
    comp = largest_component(mask)
    path = trace_boundary(comp)
    assert set(path) == oracles.exterior_boundary(comp)
    # consecutive cells (cyclically) are 8-neighbours
    if len(path) > 1:
        for a, b in zip(path, path[1:] + path[:1]):
            assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1
    assert path[0] == tuple(np.argwhere(comp)[0])


@given(st.lists(st.booleans(), min_size=49, max_size=49))
def test_contour_agrees_with_oracle_on_speckle(bits):
    mask = np.array(bits).reshape(7, 7)
    if not mask.any():
        return
    comp = largest_component(mask)
    path = trace_boundary(comp)
    assert set(path) == oracles.exterior_boundary(comp)
    if len(path) > 1:
        for a, b in zip(path, path[1:] + path[:1]):
            assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


@given(st.integers(0, 5000))
def test_contour_is_ccw(seed):
    spec = SceneSpec(seed=seed, instances=(1, 1))
    r = encode(generate_polygons(spec, 0)[0], spec.grid)
    c = extract_contour(r.mask)
    x, y = c.points[:, 0], c.points[:, 1]
    assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0


# -- filtering -------------------------------------------------------------------------

def _block_contour():
    mask = np.zeros((20, 20), bool)
    mask[4:15, 4:15] = True
    return extract_contour(mask)


def test_filter_threshold():
    c = _block_contour()  # boundary centers span [4.5, 14.5]
    kept = filter_corners(_corners([(4.5, 4.5), (4.5, 20.5 - 0.0), (9.5, 14.5 + 6.0)]), c, 5.0)
    assert [tuple(p) for p in kept.points] == [(4.5, 4.5)]


def test_filter_all_spurious():
    c = _block_contour()
    assert len(filter_corners(_corners([(30.0, 30.0), (-10.0, 0.0)]), c, 5.0)) == 0


@given(st.lists(st.tuples(st.floats(-5, 25), st.floats(-5, 25)), min_size=1, max_size=5),
       st.floats(0.1, 8), st.floats(0.1, 8))
def test_filter_monotone(points, d1, d2):
    c = _block_contour()
    lo, hi = sorted((d1, d2))
    small = {tuple(p) for p in filter_corners(_corners(points), c, lo).points}
    big = {tuple(p) for p in filter_corners(_corners(points), c, hi).points}
    assert small <= big


# -- semantic augmentation ----------------------------------------------------------------

def _l_instance():
    poly = l_shape(4.2, 4.3)
    return poly, encode(poly, GridSize(32, 32))


def test_augment_nothing_when_all_detected():
    poly, r = _l_instance()
    c = extract_contour(r.mask)
    det = decode_corners(r.heatmap, r.offsets)
    assert len(augment_semantic(det, c)) == len(det)


def test_augment_recovers_missing_reflex_corner():
    poly, r = _l_instance()
    reflex = poly.vertices[3]
    c = extract_contour(r.mask)
    det = decode_corners(r.heatmap, r.offsets)
    keep = [k for k, p in enumerate(det.points) if np.hypot(*(p - reflex)) > 1e-6]
    out = augment_semantic(det.subset(keep), c)
    added = [k for k, s in enumerate(out.source) if s == SEMANTIC]
    assert len(added) == 1
    assert out.confidence[added[0]] == C_SEM
    # the added corner is paired with the true reflex vertex by the matching oracle
    ic, _, _ = oracles.match(out.points[added], [reflex])
    assert ic == [(0, 0)]
    assert np.hypot(*(out.points[added[0]] - reflex)) <= 1.5


def test_augment_infinite_threshold():
    poly, r = _l_instance()
    c = extract_contour(r.mask)
    det = decode_corners(r.heatmap, r.offsets).subset([0, 1])
    assert len(augment_semantic(det, c, delta_sem2graph=math.inf)) == 2


def test_augment_from_nothing():
    _, r = _l_instance()
    c = extract_contour(r.mask)
    out = augment_semantic(CornerSet(), c)
    assert len(out) >= 3
    assert set(out.source) == {SEMANTIC}


# -- ordering --------------------------------------------------------------------------

def test_order_shuffled_square():
    c = _block_contour()
    pts = [(14.5, 14.5), (4.5, 4.5), (4.5, 14.5), (14.5, 4.5)]
    poly, fb = order_corners(_corners(pts), c)
    assert not fb
    assert [tuple(v) for v in poly.vertices] == [(4.5, 4.5), (14.5, 4.5), (14.5, 14.5), (4.5, 14.5)]
    assert signed_area(poly) > 0


def test_order_contour_points_follow_contour():
    c = _block_contour()
    poly, fb = order_corners(_corners(c.points[::3]), c)
    assert not fb
    np.testing.assert_array_equal(poly.vertices, c.points[::3])


def test_order_two_corners_falls_back():
    c = _block_contour()
    poly, fb = order_corners(_corners([(4.5, 4.5), (14.5, 14.5)]), c)
    assert fb
    np.testing.assert_allclose(sorted(map(tuple, poly.vertices)),
                               sorted([(4.5, 4.5), (14.5, 4.5), (14.5, 14.5), (4.5, 14.5)]))


def test_douglas_peucker_rectangle_ring():
    ring = [(x, 0.0) for x in range(5)] + [(4.0, y) for y in range(1, 4)] + \
        [(x, 3.0) for x in range(3, -1, -1)] + [(0.0, y) for y in range(2, 0, -1)]
    out = douglas_peucker(ring, 0.5)
    assert sorted(map(tuple, out)) == [(0, 0), (0, 3), (4, 0), (4, 3)]


# -- full initialization -------------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_clean_round_trip(seed):
    spec = SceneSpec(seed=seed, instances=(1, 1))
    poly = generate_polygons(spec, 0)[0]
    init = initialize(encode(poly, spec.grid))
    assert not init.fallback
    assert len(init.polygon) == len(poly)
    k = int(np.argmin(np.hypot(*(poly.vertices - init.polygon.vertices[0]).T)))
    np.testing.assert_allclose(init.polygon.vertices, np.roll(poly.vertices, -k, axis=0), atol=1e-6)
    assert init.score == 1.0


@given(st.integers(0, 10_000), st.integers(0, 2**32 - 1))
def test_confidence_noise_keeps_vertices(seed, noise_seed):
    spec = SceneSpec(seed=seed, instances=(1, 1))
    poly = generate_polygons(spec, 0)[0]
    r = encode(poly, spec.grid)
    base = initialize(r).polygon
    noisy = r.copy()
    peaks = noisy.heatmap > 0
    noisy.heatmap[peaks] = np.random.default_rng(noise_seed).uniform(0.5, 1.0, peaks.sum())
    assert initialize(noisy).polygon == base


def test_all_corners_dropped_uses_semantic_corners():
    poly, r = _l_instance()
    r.heatmap[:] = 0.0
    init = initialize(r)
    assert not init.fallback
    assert set(init.corners.source) == {SEMANTIC}
    assert init.score == C_SEM
    assert is_simple(init.polygon.vertices)


def test_fallback_score():
    mask = np.zeros((8, 8), bool)
    mask[2:4, 2:4] = True
    r = encode(square(2, 2, 2), GridSize(8, 8))
    r.heatmap[:] = 0.0
    init = initialize(r)
    assert init.fallback
    assert init.score == FALLBACK_SCORE


def test_empty_mask_raises():
    r = encode(square(2, 2, 3), GridSize(8, 8))
    r.mask[:] = False
    with pytest.raises(EmptyMask):
        initialize(r)


def test_config_validation():
    with pytest.raises(ValueError):
        InitConfig(delta_cor2cont=0)
