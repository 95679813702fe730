"""Deterministic synthetic building scenes with corrupted supervision rasters.

Every random draw comes from a stream keyed by (seed, scene index, instance
index, purpose), so instances can be generated or corrupted in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import PlacementFailure
from .geom import Polygon
from .targets import GridSize, RasterStack, encode

SHAPE_FAMILIES = ("rectangle", "L", "T", "U", "rotated-rect")

MIN_EDGE = 10.0
BORDER = 3.0
SEPARATION = 2.0
MAX_ATTEMPTS = 1000
RESTART_AFTER = 25

_SHAPE, _PLACE, _CORRUPT = 0, 1, 2


@dataclass(frozen=True)
class NoiseSpec:
    sigma_pos: float = 0.0
    p_drop: float = 0.0
    sigma_heat: float = 0.0
    sigma_ori: float = 0.0
    mask_flip: float = 0.0

    def __post_init__(self):
        for name in ("p_drop", "mask_flip"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("sigma_pos", "sigma_heat", "sigma_ori"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def is_zero(self) -> bool:
        return not any((self.sigma_pos, self.p_drop, self.sigma_heat, self.sigma_ori, self.mask_flip))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    grid: GridSize = field(default_factory=lambda: GridSize(64, 64))
    instances: Tuple[int, int] = (1, 4)
    shape_families: Tuple[str, ...] = SHAPE_FAMILIES
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        lo, hi = self.instances
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid instance range {self.instances}")
        unknown = set(self.shape_families) - set(SHAPE_FAMILIES)
        if unknown or not self.shape_families:
            raise ValueError(f"unknown shape families: {sorted(unknown)}")


@dataclass
class Scene:
    index: int
    polygons: List[Polygon]
    rasters: List[RasterStack]


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), *key]))


# -- shapes ------------------------------------------------------------------------

def _rectangle(rng) -> np.ndarray:
    w, h = rng.uniform(12, 22, size=2)
    return np.array([(0, 0), (w, 0), (w, h), (0, h)])


def _l_shape(rng) -> np.ndarray:
    nw, nh = rng.uniform(MIN_EDGE, 13, size=2)
    aw, ah = rng.uniform(MIN_EDGE, 13, size=2)
    w, h = aw + nw, ah + nh
    return np.array([(0, 0), (aw, 0), (aw, nh), (w, nh), (w, h), (0, h)])


def _t_shape(rng) -> np.ndarray:
    left, stem, right = rng.uniform(MIN_EDGE, 12, size=3)
    bar, leg = rng.uniform(MIN_EDGE, 13, size=2)
    w = left + stem + right
    return np.array([
        (0, 0), (w, 0), (w, bar), (left + stem, bar),
        (left + stem, bar + leg), (left, bar + leg), (left, bar), (0, bar),
    ])


def _u_shape(rng) -> np.ndarray:
    arm_l, gap, arm_r = rng.uniform(MIN_EDGE, 12, size=3)
    base, depth = rng.uniform(MIN_EDGE, 13, size=2)
    w = arm_l + gap + arm_r
    h = base + depth
    return np.array([
        (0, 0), (arm_l, 0), (arm_l, depth), (arm_l + gap, depth),
        (arm_l + gap, 0), (w, 0), (w, h), (0, h),
    ])


def _rotated_rect(rng) -> np.ndarray:
    w, h = rng.uniform(12, 20, size=2)
    a = math.radians(rng.uniform(10, 80))
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    base = np.array([(0, 0), (w, 0), (w, h), (0, h)]) - (w / 2, h / 2)
    return base @ rot.T


_BUILDERS = {
    "rectangle": _rectangle,
    "L": _l_shape,
    "T": _t_shape,
    "U": _u_shape,
    "rotated-rect": _rotated_rect,
}


def make_shape(family: str, rng: np.random.Generator) -> np.ndarray:
    """Vertices of one building outline with its bounding box at the origin."""
    v = _BUILDERS[family](rng)
    if family in ("L", "T", "U"):
        quarter = int(rng.integers(4))
        for _ in range(quarter):
            v = np.stack([-v[:, 1], v[:, 0]], axis=1)
    return v - v.min(axis=0)


def _vertices_well_separated(v: np.ndarray) -> bool:
    """Every vertex pair sits at least 4 cells apart along some axis."""
    d = np.abs(v[:, None, :] - v[None, :, :]).max(axis=-1)
    np.fill_diagonal(d, np.inf)
    return bool(d.min() >= 4.0)


def _free_origins(ext: np.ndarray, grid: GridSize, boxes, frac: np.ndarray) -> np.ndarray:
    """Candidate lower-left corners on a 1-px lattice that keep the shape clear of ``boxes``."""
    room = np.array([grid.width, grid.height]) - 2 * BORDER - ext
    if np.any(room < 0):
        return np.zeros((0, 2))
    xs = BORDER + frac[0] * min(1.0, room[0]) + np.arange(int(math.floor(room[0] - frac[0] * min(1.0, room[0]))) + 1)
    ys = BORDER + frac[1] * min(1.0, room[1]) + np.arange(int(math.floor(room[1] - frac[1] * min(1.0, room[1]))) + 1)
    ox, oy = np.meshgrid(xs, ys)
    ok = np.ones(ox.shape, dtype=bool)
    for b in boxes:
        ok &= (ox + ext[0] + SEPARATION <= b[0]) | (b[2] + SEPARATION <= ox) | \
              (oy + ext[1] + SEPARATION <= b[1]) | (b[3] + SEPARATION <= oy)
    return np.stack([ox[ok], oy[ok]], axis=1)


def generate_polygons(spec: SceneSpec, scene_index: int = 0) -> List[Polygon]:
    """Non-overlapping building outlines for one scene.

    Each instance draws shapes from its own stream until one fits in the
    free space left by earlier instances; the position is chosen uniformly
    among free positions on a randomly shifted 1-px lattice. A layout that
    leaves no room for the next instance is discarded and redrawn.
    """
    rng = rng_for(spec.seed, scene_index)
    lo, hi = spec.instances
    count = int(rng.integers(lo, hi + 1))
    shape_rngs = [rng_for(spec.seed, scene_index, inst, _SHAPE) for inst in range(count)]
    place_rngs = [rng_for(spec.seed, scene_index, inst, _PLACE) for inst in range(count)]
    attempts = 0
    while True:
        placed: List[np.ndarray] = []
        boxes: List[Tuple[float, float, float, float]] = []
        for inst in range(count):
            for _ in range(RESTART_AFTER):
                attempts += 1
                if attempts > MAX_ATTEMPTS:
                    raise PlacementFailure(
                        f"could not place instance {inst} of scene {scene_index} after {MAX_ATTEMPTS} attempts"
                    )
                family = spec.shape_families[int(shape_rngs[inst].integers(len(spec.shape_families)))]
                v = make_shape(family, shape_rngs[inst])
                origins = _free_origins(v.max(axis=0), spec.grid, boxes, place_rngs[inst].uniform(0, 1, size=2))
                if len(origins) == 0:
                    continue
                v = v + origins[int(place_rngs[inst].integers(len(origins)))]
                if not _vertices_well_separated(v):
                    continue
                placed.append(v)
                boxes.append((v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()))
                break
            else:
                break  # layout is too fragmented: start over
        if len(placed) == count:
            break
    return [Polygon(v) for v in placed]


def generate_scene(spec: SceneSpec, scene_index: int = 0) -> Scene:
    """Ground-truth polygons and their (possibly corrupted) raster stacks."""
    polys = generate_polygons(spec, scene_index)
    rasters = []
    for inst, poly in enumerate(polys):
        clean = encode(poly, spec.grid)
        if spec.noise.is_zero:
            rasters.append(clean)
        else:
            rasters.append(corrupt(clean, spec.noise, seed=spec.seed, key=(scene_index, inst, _CORRUPT)))
    return Scene(scene_index, polys, rasters)


# -- corruption ------------------------------------------------------------------------

def _boundary_cells(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, mode="edge")
    differs = np.zeros_like(m)
    for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        differs |= p[1 + di:1 + di + m.shape[0], 1 + dj:1 + dj + m.shape[1]] != m
    return differs


def corrupt(rasters: RasterStack, noise: NoiseSpec, seed: int = 0,
            key: Sequence[int] = ()) -> RasterStack:
    """Apply corner jitter/drop, heat noise, orientation noise and mask flips.

    An all-zero ``noise`` returns an unchanged copy.
    """
    out = rasters.copy()
    if noise.is_zero:
        return out
    rng = rng_for(seed, *key)
    h, w = out.heatmap.shape

    # corners: jitter positions, re-encode into cells, drop at random
    peaks = np.argwhere(out.heatmap >= 0.5)
    jitter = rng.normal(0.0, noise.sigma_pos, size=(len(peaks), 2)) if noise.sigma_pos > 0 else np.zeros((len(peaks), 2))
    drop = rng.random(len(peaks)) < noise.p_drop if noise.p_drop > 0 else np.zeros(len(peaks), dtype=bool)
    if noise.sigma_pos > 0 or noise.p_drop > 0:
        pos = np.stack([peaks[:, 1] + 0.5, peaks[:, 0] + 0.5], axis=1)
        pos = pos + out.offsets[peaks[:, 0], peaks[:, 1]] + jitter
        values = out.heatmap[peaks[:, 0], peaks[:, 1]].copy()
        out.heatmap[peaks[:, 0], peaks[:, 1]] = 0.0
        out.offsets[peaks[:, 0], peaks[:, 1]] = 0.0
        pos[:, 0] = np.clip(pos[:, 0], 0.0, w - 1e-9)
        pos[:, 1] = np.clip(pos[:, 1], 0.0, h - 1e-9)
        for k in range(len(peaks)):
            if drop[k]:
                continue
            j, i = int(math.floor(pos[k, 0])), int(math.floor(pos[k, 1]))
            if out.heatmap[i, j] >= values[k]:
                continue  # collided with an earlier corner
            out.heatmap[i, j] = values[k]
            out.offsets[i, j] = (pos[k, 0] - (j + 0.5), pos[k, 1] - (i + 0.5))

    if noise.sigma_heat > 0:
        out.heatmap = np.clip(out.heatmap + rng.normal(0.0, noise.sigma_heat, size=(h, w)), 0.0, 1.0)

    if noise.sigma_ori > 0:
        edge = out.edge_mask
        n_edge = int(edge.sum())
        ang = np.radians(rng.normal(0.0, noise.sigma_ori, size=(n_edge, 2)))
        vec = out.orientation[edge].reshape(n_edge, 2, 2)
        c, s = np.cos(ang), np.sin(ang)
        rx = c * vec[..., 0] - s * vec[..., 1]
        ry = s * vec[..., 0] + c * vec[..., 1]
        rot = np.stack([rx, ry], axis=-1)
        rot /= np.linalg.norm(rot, axis=-1, keepdims=True)
        out.orientation[edge] = rot.reshape(n_edge, 4)

    if noise.mask_flip > 0:
        boundary = _boundary_cells(out.mask)
        flips = boundary & (rng.random((h, w)) < noise.mask_flip)
        out.mask = out.mask ^ flips
        out.degenerate = not out.mask.any()
    return out
