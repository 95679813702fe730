"""Polygon and point/segment geometry.

Coordinates are continuous pixels with x = column, y = row and the origin at
the top-left corner of the grid; cell (i, j) spans [j, j+1) x [i, i+1) and has
its center at (j + 0.5, i + 0.5). "Counter-clockwise" means positive shoelace
area in these (x, y) coordinates.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidPolygon

EPS_DUP = 1e-6

Point2 = Tuple[float, float]
PointLike = Union[Sequence[float], np.ndarray]


def _as_vertices(vertices) -> np.ndarray:
    arr = np.array(vertices, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidPolygon(f"expected an (n, 2) vertex array, got shape {arr.shape}")
    return arr


def shoelace(vertices: np.ndarray) -> float:
    """Signed area of a closed vertex ring (first vertex not repeated)."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


class Polygon:
    """Immutable simple-ring polygon with counter-clockwise vertex order.

    Clockwise input is reversed on construction while keeping the first
    vertex in place, so ``Polygon(v).vertices[0] == v[0]`` always holds.
    """

    __slots__ = ("_v",)

    def __init__(self, vertices: Iterable[PointLike]):
        v = _as_vertices(vertices)
        if len(v) < 3:
            raise InvalidPolygon(f"a polygon needs at least 3 vertices, got {len(v)}")
        if not np.all(np.isfinite(v)):
            raise InvalidPolygon("vertex coordinates must be finite")
        gaps = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
        if np.any(gaps < EPS_DUP):
            k = int(np.argmin(gaps))
            raise InvalidPolygon(f"vertices {k} and {(k + 1) % len(v)} coincide")
        area = shoelace(v)
        if area == 0.0:
            raise InvalidPolygon("polygon has zero area")
        if area < 0:
            v = np.concatenate([v[:1], v[:0:-1]])
        v.flags.writeable = False
        self._v = v

    @property
    def vertices(self) -> np.ndarray:
        return self._v

    def __len__(self) -> int:
        return len(self._v)

    def __iter__(self):
        return iter(self._v)

    def __repr__(self) -> str:
        pts = ", ".join(f"({x:.6g}, {y:.6g})" for x, y in self._v)
        return f"Polygon([{pts}])"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polygon):
            return NotImplemented
        return self._v.shape == other._v.shape and bool(np.array_equal(self._v, other._v))

    def __hash__(self):
        return hash(self._v.tobytes())

    @property
    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Edge start and end points, edge k going from vertex k to vertex k+1."""
        return self._v, np.roll(self._v, -1, axis=0)

    def bbox(self) -> Tuple[float, float, float, float]:
        lo = self._v.min(axis=0)
        hi = self._v.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def translate(self, t: PointLike) -> "Polygon":
        return Polygon(self._v + np.asarray(t, dtype=float))

    def scale(self, s: float, origin: PointLike = (0.0, 0.0)) -> "Polygon":
        o = np.asarray(origin, dtype=float)
        return Polygon((self._v - o) * s + o)

    def rotate(self, degrees: float, origin: PointLike = (0.0, 0.0)) -> "Polygon":
        o = np.asarray(origin, dtype=float)
        a = math.radians(degrees)
        rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
        return Polygon((self._v - o) @ rot.T + o)


def signed_area(poly: Polygon) -> float:
    """Shoelace area; positive for every constructed Polygon."""
    return shoelace(poly.vertices)


def project_to_segments(points, a, b):
    """Distances from every point to every segment.

    ``points`` has shape (m, 2); ``a`` and ``b`` (k, 2). Returns distance
    (m, k), foot points (m, k, 2) and the clamped segment parameter t (m, k).
    Zero-length segments fall back to the distance to their start point.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 1, 2)
    a = np.asarray(a, dtype=float).reshape(1, -1, 2)
    b = np.asarray(b, dtype=float).reshape(1, -1, 2)
    d = b - a
    dd = np.sum(d * d, axis=-1)
    degenerate = dd == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.sum((p - a) * d, axis=-1) / np.where(degenerate, 1.0, dd)
    t = np.where(degenerate, 0.0, np.clip(t, 0.0, 1.0))
    foot = a + t[..., None] * d
    dist = np.hypot(*(p - foot).transpose(2, 0, 1))
    return dist, foot, t


def point_to_segment_distance(p: PointLike, a: PointLike, b: PointLike) -> Tuple[float, np.ndarray]:
    """Distance from ``p`` to the closed segment [a, b] and the foot point."""
    dist, foot, _ = project_to_segments([p], [a], [b])
    return float(dist[0, 0]), foot[0, 0]


def point_to_polygon_boundary(p: PointLike, poly: Polygon) -> Tuple[float, np.ndarray]:
    """Distance from ``p`` to the polygon boundary and the nearest boundary point.

    Ties between edges resolve to the lowest edge index.
    """
    a, b = poly.edges
    dist, foot, _ = project_to_segments([p], a, b)
    k = int(np.argmin(dist[0]))
    return float(dist[0, k]), foot[0, k]


def boundary_distances(points, vertices: np.ndarray, closed: bool = True) -> np.ndarray:
    """Distance from each point to a polyline (closed ring by default)."""
    v = np.asarray(vertices, dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(v) == 1:
        return np.hypot(*(pts - v[0]).T)
    a = v if closed else v[:-1]
    b = np.roll(v, -1, axis=0) if closed else v[1:]
    dist, _, _ = project_to_segments(pts, a, b)
    return dist.min(axis=1)


def turn_angles(vertices: np.ndarray) -> np.ndarray:
    """Interior angle (radians, in [0, 2*pi)) at each vertex of a CCW ring."""
    v = np.asarray(vertices, dtype=float)
    to_prev = np.roll(v, 1, axis=0) - v
    to_next = np.roll(v, -1, axis=0) - v
    cross = to_next[:, 0] * to_prev[:, 1] - to_next[:, 1] * to_prev[:, 0]
    dot = np.sum(to_next * to_prev, axis=1)
    ang = np.arctan2(cross, dot)
    return np.where(ang < 0, ang + 2 * np.pi, ang)


def interior_angles(poly: Polygon) -> np.ndarray:
    """Interior angle at every vertex in degrees; reflex vertices exceed 180.

    A collinear vertex yields exactly 180.
    """
    return np.degrees(turn_angles(poly.vertices))


def points_in_polygon(points, vertices) -> np.ndarray:
    """Even-odd inside test for an array of points.

    Uses the half-open crossing rule, so a point is classified identically
    for every polygon sharing the same edge set.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(vertices, dtype=float)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    px = pts[:, :1]
    py = pts[:, 1:]
    crosses = (y0 > py) != (y1 > py)
    with np.errstate(invalid="ignore", divide="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    hits = crosses & (px < xint)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def _scanline_fill(vertices: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Rasterize a ring on the sample lattice xs x ys (even-odd rule)."""
    x0, y0 = vertices[:, 0], vertices[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    yy = ys[:, None]
    crosses = (y0 > yy) != (y1 > yy)
    with np.errstate(invalid="ignore", divide="ignore"):
        xint = np.where(crosses, x0 + (yy - y0) * (x1 - x0) / (y1 - y0), np.inf)
    xint.sort(axis=1)
    # per scanline: number of crossings strictly left of each sample
    counts = np.stack([np.searchsorted(row, xs, side="right") for row in xint])
    return (counts % 2) == 1


def polygon_iou(p: Polygon, q: Polygon, resolution: int = 8) -> float:
    """Intersection over union by supersampled scanline rasterization.

    Samples sit at the centers of a ``resolution`` x ``resolution`` sub-grid
    per pixel, anchored at the union bounding box.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    px0, py0, px1, py1 = p.bbox()
    qx0, qy0, qx1, qy1 = q.bbox()
    if px1 <= qx0 or qx1 <= px0 or py1 <= qy0 or qy1 <= py0:
        return 0.0
    x0, y0 = min(px0, qx0), min(py0, qy0)
    x1, y1 = max(px1, qx1), max(py1, qy1)
    nx = max(1, int(math.ceil((x1 - x0) * resolution)))
    ny = max(1, int(math.ceil((y1 - y0) * resolution)))
    xs = x0 + (np.arange(nx) + 0.5) / resolution
    ys = y0 + (np.arange(ny) + 0.5) / resolution
    a = _scanline_fill(p.vertices, xs, ys)
    b = _scanline_fill(q.vertices, xs, ys)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def _orient(a, b, c):
    v = (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])
    return np.where(np.abs(v) < 1e-12, 0, np.sign(v))


def _within_box(a, b, c):
    lo = np.minimum(a, b) - 1e-12
    hi = np.maximum(a, b) + 1e-12
    return np.all((c >= lo) & (c <= hi), axis=-1)


@lru_cache(maxsize=64)
def _edge_pairs(n: int):
    """Index pairs of non-adjacent edges in an n-ring."""
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    return i[keep], j[keep]


def is_simple(vertices) -> bool:
    """True when no two non-adjacent edges of the ring touch or cross."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    if n < 3:
        return False
    ang = turn_angles(v)
    # adjacent edges folding back onto each other
    if np.any((ang < 1e-12) | (ang > 2 * np.pi - 1e-12)):
        return False
    if n == 3:
        return True
    i, j = _edge_pairs(n)
    p1, p2 = v[i], v[(i + 1) % n]
    q1, q2 = v[j], v[(j + 1) % n]
    o1, o2 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    o3, o4 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    proper = (o1 != o2) & (o3 != o4)
    touch = ((o1 == 0) & _within_box(p1, p2, q1)) | ((o2 == 0) & _within_box(p1, p2, q2)) | \
        ((o3 == 0) & _within_box(q1, q2, p1)) | ((o4 == 0) & _within_box(q1, q2, p2))
    return not bool(np.any(proper | touch))
