"""Rasterize ground-truth polygons into supervision targets.

A :class:`RasterStack` holds, for one building instance, the binary mask,
the corner heatmap, the sub-cell corner offsets and the oriented-corner field
(two unit vectors per edge cell pointing at the neighbouring corners in
clockwise and counter-clockwise order).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from .errors import VertexCollision
from .geom import Polygon, points_in_polygon, project_to_segments

RHO_EDGE = 1.0

CHANNELS = ("mask", "heat", "off_x", "off_y", "cw_x", "cw_y", "ccw_x", "ccw_y", "edge")


@dataclass(frozen=True)
class GridSize:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.height}x{self.width}")


@dataclass(eq=False)
class RasterStack:
    """Per-instance target (or prediction) grids.

    ``orientation`` channels are (cos cw, sin cw, cos ccw, sin ccw).
    """

    mask: np.ndarray
    heatmap: np.ndarray
    offsets: np.ndarray
    orientation: np.ndarray
    edge_mask: np.ndarray
    degenerate: bool = field(default=False)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def size(self) -> GridSize:
        return GridSize(self.height, self.width)

    def copy(self) -> "RasterStack":
        return replace(
            self,
            mask=self.mask.copy(),
            heatmap=self.heatmap.copy(),
            offsets=self.offsets.copy(),
            orientation=self.orientation.copy(),
            edge_mask=self.edge_mask.copy(),
        )

    def to_array(self) -> np.ndarray:
        """Stack every grid into an (H, W, 9) array in ``CHANNELS`` order."""
        return np.concatenate(
            [
                self.mask[..., None].astype(float),
                self.heatmap[..., None],
                self.offsets,
                self.orientation,
                self.edge_mask[..., None].astype(float),
            ],
            axis=-1,
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RasterStack":
        if arr.ndim != 3 or arr.shape[-1] != len(CHANNELS):
            raise ValueError(f"expected (H, W, {len(CHANNELS)}) array, got {arr.shape}")
        mask = arr[..., 0] > 0.5
        return cls(
            mask=mask,
            heatmap=arr[..., 1].copy(),
            offsets=arr[..., 2:4].copy(),
            orientation=arr[..., 4:8].copy(),
            edge_mask=arr[..., 8] > 0.5,
            degenerate=not mask.any(),
        )

    def equals(self, other: "RasterStack") -> bool:
        return bool(np.array_equal(self.to_array(), other.to_array()))


def cell_centers(size: GridSize) -> np.ndarray:
    """(H, W, 2) array of cell-center coordinates (x, y)."""
    jj, ii = np.meshgrid(np.arange(size.width), np.arange(size.height))
    return np.stack([jj + 0.5, ii + 0.5], axis=-1)


def encode_mask(poly: Polygon, size: GridSize) -> np.ndarray:
    """Cells whose center lies inside ``poly`` (even-odd rule).

    An all-zero result marks a degenerate instance.
    """
    centers = cell_centers(size).reshape(-1, 2)
    return points_in_polygon(centers, poly.vertices).reshape(size.height, size.width)


def vertex_cells(poly: Polygon) -> np.ndarray:
    """(row, col) of the cell containing each vertex."""
    v = poly.vertices
    return np.stack([np.floor(v[:, 1]), np.floor(v[:, 0])], axis=1).astype(int)


def encode_corners(poly: Polygon, size: GridSize) -> Tuple[np.ndarray, np.ndarray]:
    """Binary corner heatmap and per-cell sub-cell offsets."""
    heat = np.zeros((size.height, size.width))
    offsets = np.zeros((size.height, size.width, 2))
    cells = vertex_cells(poly)
    seen = {}
    for k, ((i, j), v) in enumerate(zip(cells, poly.vertices)):
        if not (0 <= i < size.height and 0 <= j < size.width):
            raise ValueError(f"vertex {k} at {tuple(v)} lies outside the {size.height}x{size.width} grid")
        if (i, j) in seen:
            raise VertexCollision(f"vertices {seen[(i, j)]} and {k} share cell ({i}, {j})")
        seen[(i, j)] = k
        heat[i, j] = 1.0
        offsets[i, j] = (v[0] - (j + 0.5), v[1] - (i + 0.5))
    return heat, offsets


def _unit(vec: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(vec, axis=-1, keepdims=True)
    return vec / np.where(n == 0, 1.0, n)


def encode_orientation(poly: Polygon, size: GridSize) -> Tuple[np.ndarray, np.ndarray]:
    """Oriented-corner field and the edge mask it is defined on.

    Edge cells are those whose center lies within ``RHO_EDGE`` of the
    boundary. Each such cell takes the nearest edge v_a -> v_b (CCW order,
    lowest index on ties) and stores O_ccw toward v_b and O_cw toward v_a,
    both measured from the cell center.

    Cells inside a vertex's bilinear footprint (center within one cell of
    the vertex along both axes) instead carry the corner's own vectors,
    pointing from the vertex to its next and previous corners; sampling the
    field at a true vertex therefore returns exactly that corner's
    orientation.
    """
    v = poly.vertices
    centers = cell_centers(size).reshape(-1, 2)
    a, b = poly.edges
    dist, foot, _ = project_to_segments(centers, a, b)
    nearest = np.argmin(dist, axis=1)
    dmin = dist[np.arange(len(centers)), nearest]
    band = dmin <= RHO_EDGE

    va, vb = a[nearest], b[nearest]
    tangent = _unit(vb - va)
    to_b = vb - centers
    to_a = va - centers
    ccw = np.where(np.linalg.norm(to_b, axis=1, keepdims=True) < 1e-9, tangent, _unit(to_b))
    cw = np.where(np.linalg.norm(to_a, axis=1, keepdims=True) < 1e-9, -tangent, _unit(to_a))

    corner_ccw = _unit(np.roll(v, -1, axis=0) - v)
    corner_cw = _unit(np.roll(v, 1, axis=0) - v)
    gap = np.abs(centers[:, None, :] - v[None, :, :])
    in_foot = np.all(gap <= 1.0, axis=-1)
    foot_hit = in_foot.any(axis=1)
    owner = np.argmin(np.where(in_foot, np.hypot(gap[..., 0], gap[..., 1]), np.inf), axis=1)
    ccw = np.where(foot_hit[:, None], corner_ccw[owner], ccw)
    cw = np.where(foot_hit[:, None], corner_cw[owner], cw)

    edge = band | foot_hit
    field = np.concatenate([cw, ccw], axis=1) * edge[:, None]
    return field.reshape(size.height, size.width, 4), edge.reshape(size.height, size.width)


def encode(poly: Polygon, size: GridSize) -> RasterStack:
    """Full supervision stack for one polygon."""
    mask = encode_mask(poly, size)
    heat, offsets = encode_corners(poly, size)
    orientation, edge = encode_orientation(poly, size)
    return RasterStack(
        mask=mask,
        heatmap=heat,
        offsets=offsets,
        orientation=orientation,
        edge_mask=edge,
        degenerate=not mask.any(),
    )


def bilinear(grid: np.ndarray, points) -> Tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of a cell-centered grid and their spatial Jacobian.

    ``grid`` is (H, W) or (H, W, C); samples outside the grid see zero
    padding. Returns values (m, C) and d(value)/d(x, y) with shape (m, C, 2).
    """
    g = grid if grid.ndim == 3 else grid[..., None]
    h, w, c = g.shape
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    gx = pts[:, 0] - 0.5
    gy = pts[:, 1] - 0.5
    j0 = np.floor(gx).astype(int)
    i0 = np.floor(gy).astype(int)
    fx = (gx - j0)[:, None]
    fy = (gy - i0)[:, None]

    def cell(i, j):
        ok = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        out = np.zeros((len(pts), c))
        out[ok] = g[i[ok], j[ok]]
        return out

    c00 = cell(i0, j0)
    c01 = cell(i0, j0 + 1)
    c10 = cell(i0 + 1, j0)
    c11 = cell(i0 + 1, j0 + 1)
    val = (1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)
    dx = (1 - fy) * (c01 - c00) + fy * (c11 - c10)
    dy = (1 - fx) * (c10 - c00) + fx * (c11 - c01)
    return val, np.stack([dx, dy], axis=-1)
