"""Training and refinement losses with analytic (sub)gradients.

Every loss that refinement differentiates has a ``*_value_and_grad`` twin
operating on a raw (n, 2) vertex array, so intermediate iterates need not be
valid :class:`Polygon` objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainEmpty
from .geom import Polygon, project_to_segments, turn_angles
from .targets import bilinear

EPS_LOG = 1e-7
EPS_NORM = 1e-6
ANGLE_DEADZONE = 1e-9  # degrees; angle errors below this count as exact peaks
PEAK_SPACING = 90.0

VertexArray = np.ndarray
PolyLike = Union[Polygon, np.ndarray, Sequence]


def _verts(poly: PolyLike) -> np.ndarray:
    if isinstance(poly, Polygon):
        return poly.vertices
    return np.asarray(poly, dtype=float)


@dataclass(frozen=True)
class LossWeights:
    w_pos: float = 1.0
    lambda_heat: float = 1.0
    lambda_offset: float = 1.0
    lambda_orient: float = 1.0
    lambda_poly: float = 1.0
    lambda_cons: float = 0.1
    lambda_ortho: float = 0.01 * math.pi / 180.0

    def __post_init__(self):
        if not self.w_pos > 0:
            raise ValueError("w_pos must be positive")
        for name in LOSS_PARTS:
            if getattr(self, f"lambda_{name}") < 0:
                raise ValueError(f"lambda_{name} must be non-negative")


LOSS_PARTS = ("heat", "offset", "orient", "poly", "cons", "ortho")


# -- dense head losses ------------------------------------------------------

def _check_shapes(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return pred, target


def heatmap_loss(pred, target, w_pos: float = 1.0) -> float:
    """Positive-weighted binary cross-entropy averaged over all cells."""
    pred, target = _check_shapes(pred, target)
    x = np.clip(pred, EPS_LOG, 1 - EPS_LOG)
    per_cell = w_pos * target * np.log(x) + (1 - target) * np.log(1 - x)
    return float(-per_cell.mean())


def heatmap_loss_grad(pred, target, w_pos: float = 1.0) -> np.ndarray:
    pred, target = _check_shapes(pred, target)
    x = np.clip(pred, EPS_LOG, 1 - EPS_LOG)
    g = -(w_pos * target / x - (1 - target) / (1 - x)) / pred.size
    inside = (pred > EPS_LOG) & (pred < 1 - EPS_LOG)
    return np.where(inside, g, 0.0)


def _valid_domain(shape, valid) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(valid, dtype=bool)
    # a per-cell mask also covers trailing channel axes
    while m.ndim < len(shape):
        m = m[..., None]
    m = np.broadcast_to(m, shape)
    if not m.any():
        raise DomainEmpty("no valid elements to average over")
    return m


def smooth_l1(pred, target, valid=None) -> float:
    """Huber-style loss (quadratic below 1, linear above) averaged over ``valid``.

    With a per-cell ``valid`` mask on an (H, W, C) input, the average runs
    over every channel of every valid cell.
    """
    pred, target = _check_shapes(pred, target)
    m = _valid_domain(pred.shape, valid)
    r = np.abs(pred - target)
    per = np.where(r < 1, 0.5 * r * r, r - 0.5)
    return float(per[m].mean())


def smooth_l1_grad(pred, target, valid=None) -> np.ndarray:
    pred, target = _check_shapes(pred, target)
    m = _valid_domain(pred.shape, valid)
    d = pred - target
    g = np.where(np.abs(d) < 1, d, np.sign(d))
    return np.where(m, g, 0.0) / np.count_nonzero(m)


def offset_loss(pred_offsets, target_offsets, corner_cells) -> float:
    """Offset regression supervised on corner cells only."""
    return smooth_l1(pred_offsets, target_offsets, valid=corner_cells)


def orientation_loss(pred_field, target_field, edge_mask) -> float:
    """Four-channel orientation regression over edge cells."""
    return smooth_l1(pred_field, target_field, valid=edge_mask)


# -- bi-projection polygon loss ------------------------------------------------

@dataclass
class MatchResult:
    """Vertex correspondence between a predicted and a ground-truth polygon.

    ``ic`` holds mutually matched (pred_index, gt_index) pairs. ``ac`` holds
    the leftover vertices as (side, vertex_index, edge_index, projection)
    where ``side`` names the polygon the vertex belongs to and the
    projection lies on edge ``edge_index`` of the other polygon.
    """

    ic: List[Tuple[int, int]]
    ac: List[Tuple[str, int, int, np.ndarray]]
    n: int
    ic_dist: List[float] = field(default_factory=list)
    ac_dist: List[float] = field(default_factory=list)


def biprojection_match(pred: PolyLike, gt: PolyLike, r_match: float = 3.0) -> MatchResult:
    """Mutual-nearest-neighbour vertex matching capped at ``r_match`` pixels."""
    p = _verts(pred)
    g = _verts(gt)
    d = np.hypot(*(p[:, None, :] - g[None, :, :]).transpose(2, 0, 1))
    nn_g = np.argmin(d, axis=1)
    nn_p = np.argmin(d, axis=0)
    ic, ic_dist = [], []
    used_p = np.zeros(len(p), dtype=bool)
    used_g = np.zeros(len(g), dtype=bool)
    for i, j in enumerate(nn_g):
        if nn_p[j] == i and d[i, j] <= r_match:
            ic.append((i, int(j)))
            ic_dist.append(float(d[i, j]))
            used_p[i] = used_g[j] = True

    ac, ac_dist = [], []
    for side, own, used, other in (("pred", p, used_p, g), ("gt", g, used_g, p)):
        rest = np.flatnonzero(~used)
        if len(rest) == 0:
            continue
        dist, foot, _ = project_to_segments(own[rest], other, np.roll(other, -1, axis=0))
        edge = np.argmin(dist, axis=1)
        for k, idx in enumerate(rest):
            ac.append((side, int(idx), int(edge[k]), foot[k, edge[k]].copy()))
            ac_dist.append(float(dist[k, edge[k]]))
    return MatchResult(ic=ic, ac=ac, n=max(len(p), len(g)), ic_dist=ic_dist, ac_dist=ac_dist)


def biprojection_loss(match: MatchResult) -> float:
    """Sum of matched and projected distances divided by the larger vertex count."""
    return (sum(match.ic_dist) + sum(match.ac_dist)) / match.n


def biprojection_value_and_grad(pred: PolyLike, gt: PolyLike, match: MatchResult) -> Tuple[float, np.ndarray]:
    """Loss and subgradient w.r.t. predicted vertices, holding ``match`` fixed.

    Projections are recomputed onto the same edges the match recorded.
    """
    p = _verts(pred)
    g = _verts(gt)
    grad = np.zeros_like(p)
    total = 0.0
    for i, j in match.ic:
        diff = p[i] - g[j]
        dist = math.hypot(*diff)
        total += dist
        if dist > 0:
            grad[i] += diff / dist
    for side, idx, edge, _ in match.ac:
        if side == "pred":
            a, b = g[edge], g[(edge + 1) % len(g)]
            q = p[idx]
        else:
            a, b = p[edge], p[(edge + 1) % len(p)]
            q = g[idx]
        dist, foot, t = project_to_segments([q], [a], [b])
        dist, foot, t = float(dist[0, 0]), foot[0, 0], float(t[0, 0])
        total += dist
        if dist == 0:
            continue
        u = (q - foot) / dist
        if side == "pred":
            grad[idx] += u
        else:
            e = (edge + 1) % len(p)
            grad[edge] -= (1 - t) * u
            grad[e] -= t * u
    return total / match.n, grad / match.n


# -- orientation consistency ----------------------------------------------------

class OrientationField:
    """Continuous view of a four-channel oriented-corner grid.

    ``sample`` returns raw bilinear samples (m, 4) with channels
    (cw_x, cw_y, ccw_x, ccw_y) and their spatial Jacobian (m, 4, 2).
    """

    def __init__(self, grid: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 3 or grid.shape[-1] != 4:
            raise ValueError(f"orientation grid must be (H, W, 4), got {grid.shape}")
        self.grid = grid

    def sample(self, points):
        return bilinear(self.grid, points)


def orientation_consistency_value_and_grad(poly: PolyLike, field) -> Tuple[float, np.ndarray]:
    """Mean of 1 + <O_ccw at vertex i, O_cw at vertex i+1> and its gradient.

    Samples are renormalized to unit length; a sample shorter than
    ``EPS_NORM`` makes its term the neutral value 1 with zero gradient.
    """
    v = _verts(poly)
    n = len(v)
    vals, jac = field.sample(v)
    s = vals[:, 2:4]                      # O_ccw at vertex i
    t = np.roll(vals[:, 0:2], -1, axis=0)  # O_cw at vertex i+1
    js = jac[:, 2:4, :]
    jt = np.roll(jac[:, 0:2, :], -1, axis=0)
    ns = np.linalg.norm(s, axis=1)
    nt = np.linalg.norm(t, axis=1)
    ok = (ns >= EPS_NORM) & (nt >= EPS_NORM)
    u = s / np.where(ok, ns, 1.0)[:, None]
    w = t / np.where(ok, nt, 1.0)[:, None]
    inner = np.where(ok, np.sum(u * w, axis=1), 0.0)
    value = float(np.mean(1.0 + inner))

    # d<u, w>/ds = (I - u u^T) w / |s|, chained through the sampler Jacobian
    gs = (w - np.sum(u * w, axis=1, keepdims=True) * u) / np.where(ok, ns, 1.0)[:, None]
    gt = (u - np.sum(u * w, axis=1, keepdims=True) * w) / np.where(ok, nt, 1.0)[:, None]
    gs[~ok] = 0.0
    gt[~ok] = 0.0
    grad_i = np.einsum("kcd,kc->kd", js, gs)
    grad_next = np.einsum("kcd,kc->kd", jt, gt)
    grad = grad_i + np.roll(grad_next, 1, axis=0)
    return value, grad / n


def orientation_consistency_loss(poly: PolyLike, field) -> float:
    return orientation_consistency_value_and_grad(poly, field)[0]


# -- orthogonality ----------------------------------------------------------------

def angle_peak_deviation(angles_deg: np.ndarray) -> np.ndarray:
    """Signed distance from each angle to the nearest of 0, 90, 180, 270 degrees.

    The peak set is treated cyclically, so 360 coincides with 0.
    """
    a = np.asarray(angles_deg, dtype=float)
    return a - PEAK_SPACING * np.round(a / PEAK_SPACING)


def orthogonality_value_and_grad(poly: PolyLike) -> Tuple[float, np.ndarray]:
    """Mean absolute deviation of interior angles from the peak set, in degrees."""
    v = _verts(poly)
    n = len(v)
    ang = np.degrees(turn_angles(v))
    dev = angle_peak_deviation(ang)
    value = float(np.mean(np.abs(dev)))

    sign = np.sign(dev)
    sign[np.abs(dev) < ANGLE_DEADZONE] = 0.0
    # equidistant from two peaks: both branches active, choose zero
    sign[np.abs(np.abs(dev) - PEAK_SPACING / 2) < ANGLE_DEADZONE] = 0.0

    to_prev = np.roll(v, 1, axis=0) - v
    to_next = np.roll(v, -1, axis=0) - v
    # interior angle = heading(to_prev) - heading(to_next)
    d_prev = np.stack([-to_prev[:, 1], to_prev[:, 0]], axis=1) / np.sum(to_prev**2, axis=1, keepdims=True)
    d_next = -np.stack([-to_next[:, 1], to_next[:, 0]], axis=1) / np.sum(to_next**2, axis=1, keepdims=True)
    scale = (sign * 180.0 / math.pi)[:, None]
    g_prev = scale * d_prev
    g_next = scale * d_next
    grad = -(g_prev + g_next) + np.roll(g_prev, -1, axis=0) + np.roll(g_next, 1, axis=0)
    return value, grad / n


def orthogonality_loss(poly: PolyLike) -> float:
    return orthogonality_value_and_grad(poly)[0]


# -- weighted sum -------------------------------------------------------------------

def total_loss(parts: Union[Mapping[str, float], Sequence[float]], weights: Optional[LossWeights] = None) -> float:
    """Weighted sum of the six loss parts.

    ``parts`` is either a mapping keyed by ``LOSS_PARTS`` names (missing
    keys count as zero) or a sequence in that order.
    """
    weights = weights or LossWeights()
    if isinstance(parts, Mapping):
        unknown = set(parts) - set(LOSS_PARTS)
        if unknown:
            raise KeyError(f"unknown loss parts: {sorted(unknown)}")
        values = [parts.get(name, 0.0) for name in LOSS_PARTS]
    else:
        values = list(parts)
        if len(values) != len(LOSS_PARTS):
            raise ValueError(f"expected {len(LOSS_PARTS)} parts, got {len(values)}")
    if not all(math.isfinite(x) for x in values):
        raise ValueError("loss parts must be finite")
    return float(sum(getattr(weights, f"lambda_{name}") * x for name, x in zip(LOSS_PARTS, values)))
