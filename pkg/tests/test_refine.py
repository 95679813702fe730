import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oricorner.geom import Polygon, is_simple
from oricorner.losses import orthogonality_loss
from oricorner.metrics import mean_angle_deviation, polis
from oricorner.refine import EnergyModel, HeatField, RefineConfig, energy, refine
from oricorner.targets import GridSize, RasterStack, encode

import gradcheck
from shapes import l_shape, square

G = GridSize(32, 32)


def _clean(poly):
    return encode(poly, G)


def test_energy_at_ground_truth():
    for poly in (square(6.3, 7.2, 14), l_shape(4.2, 4.6)):
        e = energy(poly, _clean(poly))
        assert e.heat_attraction <= 1e-3
        assert e.orientation_alignment <= 1e-3
        assert e.orthogonality == pytest.approx(0.0, abs=1e-9)


def test_energy_total_is_weighted_sum():
    poly = square(6.3, 7.2, 14)
    cfg = RefineConfig(mu_heat=2.0, mu_ori=3.0, mu_ortho=0.5)
    e = energy(poly.translate((0.7, -0.4)).rotate(3, origin=(13, 14)), _clean(poly), cfg)
    assert e.total == pytest.approx(2 * e.heat_attraction + 3 * e.orientation_alignment + 0.5 * e.orthogonality)


def test_energy_increases_off_target():
    poly = square(6.3, 7.2, 14)
    r = _clean(poly)
    assert energy(poly.translate((3, 0)), r).total > energy(poly, r).total


def test_energy_zero_weights():
    poly = square(6.3, 7.2, 14)
    e = energy(poly.translate((1.3, 2.1)), _clean(poly), RefineConfig(mu_heat=0, mu_ori=0, mu_ortho=0))
    assert e.total == 0.0


def test_energy_vertex_outside_raster():
    poly = square(6.3, 7.2, 14)
    e = energy(Polygon([(-5, -5), (40, -5), (40, 40)]), _clean(poly))
    assert e.heat_attraction == 1.0
    assert np.isfinite(e.total)


def test_heat_field_peaks_at_corners():
    poly = l_shape(4.2, 4.6)
    r = _clean(poly)
    hf = HeatField(r.heatmap, r.offsets)
    val, grad = hf.value_and_grad(poly.vertices)
    np.testing.assert_allclose(val, 1.0)
    np.testing.assert_allclose(grad, 0.0)


def test_energy_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    poly = l_shape(4.2, 4.6)
    r = _clean(poly)
    r.heatmap = np.clip(r.heatmap + rng.uniform(0, 0.3, r.heatmap.shape), 0, 1)
    model = EnergyModel(r, RefineConfig())
    worst = 0.0
    for _ in range(100):
        while True:
            v = poly.vertices + rng.uniform(-1.2, 1.2, poly.vertices.shape)
            frac = (v - 0.5) % 1.0
            peaks = model.heat.peaks
            d = np.abs(v[:, None, :] - peaks[None])
            # stay clear of bilinear cell lines, tent ridges and max-switch boundaries
            if np.any((frac < 1e-3) | (frac > 1 - 1e-3)) or np.any(np.abs(d - 2.0) < 1e-3) or np.any(d < 1e-3):
                continue
            vals, _ = model.heat.value_and_grad(v)
            k = model.heat.weights[None] * np.prod(np.clip(1 - d / 2.0, 0, None), axis=-1)
            top = np.sort(k, axis=1)[:, -2:]
            if np.any((top[:, 1] > 0) & (top[:, 1] - top[:, 0] < 1e-3)):
                continue
            break
        _, a = model(v)
        n = gradcheck.numeric_grad(lambda x: model(x)[0].total, v)
        worst = max(worst, gradcheck.rel_error(a, n))
    assert worst <= 1e-4


def test_refine_stationary_at_ground_truth():
    poly = l_shape(4.2, 4.6)
    out, trace = refine(poly, _clean(poly))
    np.testing.assert_allclose(out.vertices, poly.vertices, atol=1e-3)
    assert len(trace) == RefineConfig().iterations + 1


@pytest.mark.parametrize("seed", range(100))
def test_refine_improves_perturbed_square(seed):
    rng = np.random.default_rng(seed)
    gt = square(8.3, 9.6, 13)
    start = Polygon(gt.vertices + rng.uniform(-1, 1, (4, 2)))
    res = refine(start, _clean(gt))
    assert res.monotone()
    assert polis(res.polygon, gt) < polis(start, gt)


@pytest.mark.parametrize("seed", range(100))
def test_orthogonality_weight_straightens_angles(seed):
    rng = np.random.default_rng(seed)
    gt = l_shape(4.2, 4.6)
    start = Polygon(gt.vertices + rng.uniform(-0.8, 0.8, gt.vertices.shape))
    cfg = RefineConfig(mu_heat=0.0, mu_ori=0.0, mu_ortho=1.0)
    res = refine(start, _clean(gt), cfg)
    assert res.monotone()
    assert mean_angle_deviation([res.polygon]) < mean_angle_deviation([start])
    assert orthogonality_loss(res.polygon) <= orthogonality_loss(start) + 1e-9


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(-6, 6), st.integers(-6, 6))
def test_refine_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    gt = square(9.3, 9.6, 11)
    start = Polygon(gt.vertices + rng.uniform(-1, 1, (4, 2)))
    base = refine(start, _clean(gt)).polygon
    moved = refine(start.translate((dx, dy)), _clean(gt.translate((dx, dy)))).polygon
    np.testing.assert_allclose(moved.vertices, base.vertices + (dx, dy), atol=1e-6)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_refine_preserves_count_and_simplicity(seed):
    rng = np.random.default_rng(seed)
    gt = l_shape(4.2, 4.6)
    r = _clean(gt)
    r.orientation = r.orientation + rng.normal(0, 0.5, r.orientation.shape) * r.edge_mask[..., None]
    start = Polygon(gt.vertices + rng.uniform(-1.5, 1.5, gt.vertices.shape))
    res = refine(start, r)
    assert len(res.polygon) == len(start)
    assert res.valid and is_simple(res.polygon.vertices)
    assert res.monotone()


def test_zero_iterations_returns_input():
    poly = square(8.3, 9.6, 13)
    res = refine(poly.translate((0.5, 0.5)), _clean(poly), RefineConfig(iterations=0))
    assert res.polygon == poly.translate((0.5, 0.5))
    assert len(res.trace) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(step=0)
    with pytest.raises(ValueError):
        RefineConfig(mu_ortho=-1)
    with pytest.raises(ValueError):
        RefineConfig(stages=0)
