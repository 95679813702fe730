"""Polygon refinement by projected subgradient descent on a geometric energy.

The energy combines attraction to decoded corner peaks, the orientation
consistency loss sampled from the oriented-corner field, and the
orthogonality loss on interior angles. Descent runs in stages with a
decaying step, and backtracking makes every trace non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidPolygon
from .geom import EPS_DUP, Polygon, is_simple
from .losses import OrientationField, orientation_consistency_value_and_grad, orthogonality_value_and_grad
from .targets import RasterStack

GRAD_DEADZONE = 1e-9


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 100
    stages: int = 3
    step: float = 0.2
    step_decay: float = 0.5
    mu_heat: float = 1.0
    mu_ori: float = 1.0
    mu_ortho: float = 0.05
    clamp_step: float = 0.5
    heat_radius: float = 2.0
    max_halvings: int = 5

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if not self.step > 0 or not self.clamp_step > 0 or not self.heat_radius > 0:
            raise ValueError("step, clamp_step and heat_radius must be positive")
        if min(self.mu_heat, self.mu_ori, self.mu_ortho) < 0:
            raise ValueError("energy weights must be non-negative")


@dataclass(frozen=True)
class Energy:
    total: float
    heat_attraction: float
    orientation_alignment: float
    orthogonality: float


class HeatField:
    """Corner attraction built from a heatmap and its offsets.

    Every cell with positive heat contributes a tent of half-width
    ``radius`` centred on its offset-corrected corner position and scaled
    by its heat value; the field is the maximum over cells, so a clean
    target reaches exactly 1 at every true vertex.
    """

    def __init__(self, heatmap: np.ndarray, offsets: np.ndarray, radius: float = 2.0):
        cells = np.argwhere(heatmap > 0)
        i, j = cells[:, 0], cells[:, 1]
        self.peaks = np.stack([j + 0.5 + offsets[i, j, 0], i + 0.5 + offsets[i, j, 1]], axis=1)
        self.weights = heatmap[i, j].astype(float)
        self.radius = float(radius)

    def value_and_grad(self, points) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.peaks) == 0:
            return np.zeros(len(pts)), np.zeros_like(pts)
        d = pts[:, None, :] - self.peaks[None, :, :]
        lin = 1.0 - np.abs(d) / self.radius
        kx = np.clip(lin[..., 0], 0.0, None)
        ky = np.clip(lin[..., 1], 0.0, None)
        vals = self.weights[None, :] * kx * ky
        best = np.argmax(vals, axis=1)
        rows = np.arange(len(pts))
        value = vals[rows, best]
        db = d[rows, best]
        sx = np.sign(db[:, 0])
        sy = np.sign(db[:, 1])
        sx[np.abs(db[:, 0]) < GRAD_DEADZONE] = 0.0
        sy[np.abs(db[:, 1]) < GRAD_DEADZONE] = 0.0
        w = self.weights[best]
        gx = -w * sx / self.radius * ky[rows, best]
        gy = -w * sy / self.radius * kx[rows, best]
        grad = np.where((value > 0)[:, None], np.stack([gx, gy], axis=1), 0.0)
        return value, grad


class EnergyModel:
    """Energy of a vertex array against one instance's rasters."""

    def __init__(self, rasters: RasterStack, cfg: RefineConfig):
        self.cfg = cfg
        self.heat = HeatField(rasters.heatmap, rasters.offsets, cfg.heat_radius)
        self.field = OrientationField(rasters.orientation)

    def __call__(self, vertices: np.ndarray) -> Tuple[Energy, np.ndarray]:
        cfg = self.cfg
        v = np.asarray(vertices, dtype=float)
        n = len(v)
        hv, hg = self.heat.value_and_grad(v)
        heat = float(np.mean(1.0 - hv))
        ori, og = orientation_consistency_value_and_grad(v, self.field)
        ortho, tg = orthogonality_value_and_grad(v)
        total = cfg.mu_heat * heat + cfg.mu_ori * ori + cfg.mu_ortho * ortho
        grad = -cfg.mu_heat * hg / n + cfg.mu_ori * og + cfg.mu_ortho * tg
        return Energy(total, heat, ori, ortho), grad


def energy(poly, rasters: RasterStack, cfg: Optional[RefineConfig] = None) -> Energy:
    cfg = cfg or RefineConfig()
    v = poly.vertices if isinstance(poly, Polygon) else np.asarray(poly, dtype=float)
    return EnergyModel(rasters, cfg)(v)[0]


@dataclass
class RefineResult:
    polygon: Polygon
    trace: List[Energy] = field(default_factory=list)
    valid: bool = True

    def __iter__(self):
        yield self.polygon
        yield self.trace

    def monotone(self, tol: float = 1e-9) -> bool:
        totals = [e.total for e in self.trace]
        return all(b <= a + tol for a, b in zip(totals, totals[1:]))


def _clamp(delta: np.ndarray, limit: float) -> np.ndarray:
    norm = np.linalg.norm(delta, axis=1, keepdims=True)
    return delta * np.minimum(1.0, limit / np.where(norm > 0, norm, 1.0))


def _acceptable(v: np.ndarray, need_simple: bool) -> bool:
    gaps = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
    if np.any(gaps < EPS_DUP):
        return False
    return is_simple(v) if need_simple else True


def refine(poly: Polygon, rasters: RasterStack, cfg: Optional[RefineConfig] = None) -> RefineResult:
    """Normalized subgradient descent with per-vertex clamping and backtracking.

    The vertex with the largest gradient moves by the current step; a
    candidate that raises the energy or breaks simplicity is retried with
    half the step, up to ``max_halvings`` times, after which the iterate is
    kept unchanged.
    """
    cfg = cfg or RefineConfig()
    model = EnergyModel(rasters, cfg)
    x = np.array(poly.vertices, dtype=float)
    need_simple = is_simple(x)
    e, g = model(x)
    trace = [e]
    if cfg.iterations == 0:
        return RefineResult(poly, trace, need_simple)

    stage_sizes = [len(s) for s in np.array_split(np.arange(cfg.iterations), cfg.stages)]
    for stage, size in enumerate(stage_sizes):
        base = cfg.step * cfg.step_decay**stage
        stuck = False
        for _ in range(size):
            gmax = float(np.max(np.linalg.norm(g, axis=1)))
            if stuck or gmax < GRAD_DEADZONE:
                # the iterate cannot change again within this stage
                trace.append(e)
                continue
            direction = -g / gmax
            t = base
            stuck = True
            for _ in range(cfg.max_halvings + 1):
                cand = x + _clamp(t * direction, cfg.clamp_step)
                if _acceptable(cand, need_simple):
                    ec, gc = model(cand)
                    if ec.total <= e.total:
                        stuck = False
                        x, e, g = cand, ec, gc
                        break
                t *= 0.5
            trace.append(e)

    try:
        out = Polygon(x)
    except InvalidPolygon:
        return RefineResult(poly, trace, False)
    return RefineResult(out, trace, is_simple(out.vertices))
