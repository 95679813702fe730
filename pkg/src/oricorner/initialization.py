"""Initial polygon construction from corner heatmaps and a building mask.

Detected corners are decoded from the heatmap, filtered by their distance
to the mask contour, complemented with high-curvature contour points that
the detected polygon misses, and finally chained in contour order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, InvalidPolygon
from .geom import EPS_DUP, Polygon, boundary_distances, project_to_segments, shoelace
from .targets import RasterStack

C_SEM = 0.5
FALLBACK_SCORE = 0.25
CURVATURE_WINDOW = 3
DP_TOLERANCE = 1.0

DETECTED = "detected"
SEMANTIC = "semantic"


@dataclass(frozen=True)
class InitConfig:
    delta_cor2cont: float = 5.0
    delta_sem2graph: float = 5.0
    tau_peak: float = 0.5
    angle_tol_sem: float = 15.0

    def __post_init__(self):
        for name in ("delta_cor2cont", "delta_sem2graph", "tau_peak", "angle_tol_sem"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class CornerSet:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    confidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    source: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        self.source = list(self.source)
        if not (len(self.points) == len(self.confidence) == len(self.source)):
            raise ValueError("corner fields must have equal length")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "CornerSet":
        idx = np.asarray(idx, dtype=int).reshape(-1)
        return CornerSet(self.points[idx], self.confidence[idx], [self.source[k] for k in idx])

    def append(self, point, confidence: float, source: str) -> "CornerSet":
        return CornerSet(
            np.vstack([self.points, np.asarray(point, dtype=float).reshape(1, 2)]),
            np.append(self.confidence, confidence),
            self.source + [source],
        )


@dataclass
class Contour:
    """Closed CCW chain of boundary cell centers with cumulative arc length."""

    points: np.ndarray
    arclength: np.ndarray
    length: float
    degenerate: bool = False

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_points(cls, points, degenerate: bool = False) -> "Contour":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) > 2 and shoelace(pts) < 0:
            pts = np.concatenate([pts[:1], pts[:0:-1]])
        steps = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
        closing = float(np.hypot(*(pts[0] - pts[-1]))) if len(pts) > 1 else 0.0
        arc = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(pts, arc, float(arc[-1] + closing), degenerate or len(pts) < 3)

    def project(self, points) -> Tuple[np.ndarray, np.ndarray]:
        """Distance to the closed contour and arc-length position of each point."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.points) == 1:
            return np.hypot(*(pts - self.points[0]).T), np.zeros(len(pts))
        a = self.points
        b = np.roll(a, -1, axis=0)
        dist, _, t = project_to_segments(pts, a, b)
        k = np.argmin(dist, axis=1)
        rows = np.arange(len(pts))
        seg = np.hypot(*(b - a).T)
        return dist[rows, k], self.arclength[k] + t[rows, k] * seg[k]


# -- corner decoding ------------------------------------------------------------

def peak_cells(heatmap: np.ndarray, tau_peak: float) -> np.ndarray:
    """(row, col) of strict 3x3 maxima at or above ``tau_peak``.

    Equal neighbours are resolved in favour of the smaller row, then column.
    """
    h = np.asarray(heatmap, dtype=float)
    rows, cols = h.shape
    padded = np.full((rows + 2, cols + 2), -np.inf)
    padded[1:-1, 1:-1] = h
    keep = h >= tau_peak
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            nb = padded[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
            earlier = di < 0 or (di == 0 and dj < 0)
            keep &= (nb <= h) if not earlier else (nb < h)
    return np.argwhere(keep)


def decode_corners(heatmap: np.ndarray, offsets: np.ndarray, tau_peak: float = 0.5) -> CornerSet:
    """Sub-cell corner positions from heatmap peaks plus offsets."""
    cells = peak_cells(heatmap, tau_peak)
    if len(cells) == 0:
        return CornerSet()
    i, j = cells[:, 0], cells[:, 1]
    pts = np.stack([j + 0.5 + offsets[i, j, 0], i + 0.5 + offsets[i, j, 1]], axis=1)
    return CornerSet(pts, heatmap[i, j], [DETECTED] * len(pts))


# -- contour --------------------------------------------------------------------

# Moore neighbourhood, clockwise on screen starting west: (drow, dcol)
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_MOORE_INDEX = {d: k for k, d in enumerate(_MOORE)}


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(np.asarray(mask, dtype=bool))
    if count == 0:
        raise EmptyMask("mask has no foreground cells")
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def trace_boundary(component: np.ndarray) -> List[Tuple[int, int]]:
    """Moore-neighbour tracing of the outer boundary.

    Starts at the first foreground cell in raster order and stops when the
    first move (start to second cell) is about to repeat; Jacob's entry-side
    test alone never fires on one-cell-wide shapes whose start is re-entered
    from a different side. Returns boundary cells (row, col) as a closed
    chain without repeating the start; cells on one-cell-wide parts can
    appear twice.
    """
    comp = np.pad(np.asarray(component, dtype=bool), 1)
    fg = np.argwhere(comp)
    start = (int(fg[0][0]), int(fg[0][1]))
    path = [start]
    p, back = start, (start[0], start[1] - 1)
    second = None
    for _ in range(4 * comp.size):
        d0 = _MOORE_INDEX[(back[0] - p[0], back[1] - p[1])]
        prev = back
        nxt = None
        for k in range(1, 9):
            dr, dc = _MOORE[(d0 + k) % 8]
            q = (p[0] + dr, p[1] + dc)
            if comp[q]:
                nxt = q
                break
            prev = q
        if nxt is None:
            break  # isolated cell
        if second is None:
            second = nxt
        elif p == start and nxt == second:
            break
        path.append(nxt)
        p, back = nxt, prev
    if len(path) > 1 and path[-1] == start:
        path.pop()
    return [(r - 1, c - 1) for r, c in path]


def extract_contour(mask: np.ndarray) -> Contour:
    """Closed CCW contour of cell centers around the largest 4-connected component."""
    comp = largest_component(mask)
    cells = trace_boundary(comp)
    pts = np.array([(c + 0.5, r + 0.5) for r, c in cells], dtype=float)
    return Contour.from_points(pts, degenerate=len(cells) == 1)


# -- filtering and augmentation ---------------------------------------------------

def filter_corners(corners: CornerSet, contour: Contour, delta_cor2cont: float = 5.0) -> CornerSet:
    """Drop corners farther than ``delta_cor2cont`` from the contour."""
    if len(corners) == 0:
        return corners
    dist, _ = contour.project(corners.points)
    return corners.subset(np.flatnonzero(dist <= delta_cor2cont))


def contour_turns(contour: Contour, window: int = CURVATURE_WINDOW) -> np.ndarray:
    """Turning angle in degrees at each contour point over a +-window chord."""
    p = contour.points
    m = len(p)
    if m < 2 * window + 1:
        return np.zeros(m)
    a = np.roll(p, window, axis=0) - p
    b = np.roll(p, -window, axis=0) - p
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    cos = np.sum(a * b, axis=1) / np.where(ok, na * nb, 1.0)
    inner = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.where(ok, 180.0 - inner, 0.0)


def contour_corner_candidates(contour: Contour, angle_tol: float = 15.0,
                              window: int = CURVATURE_WINDOW) -> Tuple[np.ndarray, np.ndarray]:
    """Indices and turn angles of contour points that are local turn maxima above ``angle_tol``."""
    turns = contour_turns(contour, window)
    m = len(turns)
    if m < 2 * window + 1:
        return np.zeros(0, dtype=int), np.zeros(0)
    keep = turns > angle_tol
    for s in range(1, window + 1):
        keep &= turns > np.roll(turns, s)    # strictly above earlier points
        keep &= turns >= np.roll(turns, -s)  # at least later points
    idx = np.flatnonzero(keep)
    return idx, turns[idx]


def _ring_order(corners: CornerSet, contour: Contour) -> np.ndarray:
    """Permutation sorting corners by contour arc length, confidence descending on ties."""
    if len(corners) == 0:
        return np.zeros(0, dtype=int)
    _, arc = contour.project(corners.points)
    arc = np.round(arc / 1e-9) * 1e-9
    return np.lexsort((-corners.confidence, arc))


def augment_semantic(corners: CornerSet, contour: Contour, delta_sem2graph: float = 5.0,
                     angle_tol_sem: float = 15.0) -> CornerSet:
    """Greedily add contour corners that lie far from the current corner ring.

    The candidate farthest from the ring (ties: sharper turn, then contour
    index) is added first; the ring is rebuilt after every addition.
    """
    idx, turns = contour_corner_candidates(contour, angle_tol_sem)
    cand = contour.points[idx]
    alive = np.ones(len(idx), dtype=bool)
    out = corners
    while alive.any():
        if len(out) == 0:
            dist = np.full(len(idx), np.inf)
        else:
            ring = out.points[_ring_order(out, contour)]
            dist = boundary_distances(cand, ring, closed=True)
        live = np.flatnonzero(alive)
        order = sorted(live, key=lambda k: (-dist[k], -turns[k], k))
        best = order[0]
        if not dist[best] > delta_sem2graph:
            break
        out = out.append(cand[best], C_SEM, SEMANTIC)
        alive[best] = False
    return out


# -- ordering ---------------------------------------------------------------------

def douglas_peucker(points, tolerance: float = DP_TOLERANCE, closed: bool = True) -> np.ndarray:
    """Ramer-Douglas-Peucker simplification; closed rings split at the point farthest from the start."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        return pts.copy()

    def simplify_open(chain: np.ndarray) -> List[int]:
        keep = [0, len(chain) - 1]
        stack = [(0, len(chain) - 1)]
        while stack:
            lo, hi = stack.pop()
            if hi - lo < 2:
                continue
            dist, _, _ = project_to_segments(chain[lo + 1:hi], chain[lo:lo + 1], chain[hi:hi + 1])
            k = int(np.argmax(dist[:, 0]))
            if dist[k, 0] > tolerance:
                mid = lo + 1 + k
                keep.append(mid)
                stack.extend([(lo, mid), (mid, hi)])
        return sorted(set(keep))

    if not closed:
        return pts[simplify_open(pts)]
    far = int(np.argmax(np.hypot(*(pts - pts[0]).T)))
    if far == 0:
        return pts[:1].copy()
    first = simplify_open(pts[: far + 1])
    second = simplify_open(np.vstack([pts[far:], pts[:1]]))
    idx = first + [far + k for k in second[1:-1]]
    return pts[idx]


def fallback_polygon(contour: Contour) -> Polygon:
    """Douglas-Peucker simplified contour, or the cell square around a tiny contour."""
    simplified = douglas_peucker(contour.points, DP_TOLERANCE, closed=True)
    try:
        return Polygon(simplified)
    except InvalidPolygon:
        lo = contour.points.min(axis=0) - 0.5
        hi = contour.points.max(axis=0) + 0.5
        return Polygon([lo, (hi[0], lo[1]), hi, (lo[0], hi[1])])


def _dedupe(corners: CornerSet) -> CornerSet:
    """Drop corners within EPS_DUP of a higher-confidence corner."""
    order = np.argsort(-corners.confidence, kind="stable")
    kept: List[int] = []
    for k in order:
        if all(math.hypot(*(corners.points[k] - corners.points[q])) >= EPS_DUP for q in kept):
            kept.append(int(k))
    return corners.subset(sorted(kept))


def order_corners(corners: CornerSet, contour: Contour) -> Tuple[Polygon, bool]:
    """Chain corners by the arc length of their projection onto the contour.

    Returns the polygon and a flag that is True when fewer than three usable
    corners forced the Douglas-Peucker fallback.
    """
    corners = _dedupe(corners) if len(corners) else corners
    if len(corners) >= 3:
        ring = corners.points[_ring_order(corners, contour)]
        try:
            return Polygon(ring), False
        except InvalidPolygon:
            pass
    return fallback_polygon(contour), True


# -- full module ------------------------------------------------------------------

@dataclass
class Initialization:
    polygon: Polygon
    corners: CornerSet
    fallback: bool
    score: float
    contour: Optional[Contour] = None


def initialize(rasters: RasterStack, cfg: Optional[InitConfig] = None) -> Initialization:
    """Decode, filter, augment and order corners for one instance."""
    cfg = cfg or InitConfig()
    contour = extract_contour(rasters.mask)
    detected = decode_corners(rasters.heatmap, rasters.offsets, cfg.tau_peak)
    kept = filter_corners(detected, contour, cfg.delta_cor2cont)
    corners = augment_semantic(kept, contour, cfg.delta_sem2graph, cfg.angle_tol_sem)
    polygon, fallback = order_corners(corners, contour)
    if fallback:
        score = FALLBACK_SCORE
    else:
        score = float(np.mean(corners.confidence))
    return Initialization(polygon, corners, fallback, min(1.0, max(0.0, score)), contour)
