"""Vector and raster evaluation: PoLiS, C-IoU and COCO-style AP/AR.

The COCO protocol here is the single-category form: no crowd flags, no
area ranges, at most 100 detections per scene and 101-point interpolated
precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import UndefinedMetric
from .geom import Polygon, boundary_distances, interior_angles, polygon_iou
from .losses import angle_peak_deviation

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100


@dataclass(frozen=True)
class InstancePrediction:
    id: int
    polygon: Polygon
    score: float = 1.0
    fallback: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def polis(p: Polygon, q: Polygon) -> float:
    """Symmetric mean vertex-to-boundary distance.

    Each polygon's vertices are measured against the other polygon's
    boundary, and the two sums are normalized by twice the respective
    vertex counts.
    """
    a = boundary_distances(p.vertices, q.vertices).sum() / (2 * len(p))
    b = boundary_distances(q.vertices, p.vertices).sum() / (2 * len(q))
    return float(a + b)


def vertex_count_penalty(n_p: int, n_q: int) -> float:
    return abs(n_p - n_q) / (n_p + n_q)


def ciou(p: Polygon, q: Polygon, resolution: int = 8, iou: Optional[float] = None) -> float:
    """IoU discounted by the relative vertex-count difference."""
    if iou is None:
        iou = polygon_iou(p, q, resolution)
    return iou * (1.0 - vertex_count_penalty(len(p), len(q)))


def iou_matrix(preds: Sequence[Polygon], gts: Sequence[Polygon], resolution: int = 8) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = polygon_iou(p, g, resolution)
    return out


def score_order(scores: Sequence[float]) -> np.ndarray:
    """Indices by descending score; equal scores keep their input order."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="mergesort")


@dataclass
class Matching:
    """Greedy assignment at one IoU threshold.

    ``order`` lists prediction indices in processing order and
    ``pred_to_gt[k]`` is the matched GT index of prediction k, or -1.
    """

    order: np.ndarray
    pred_to_gt: np.ndarray
    ious: np.ndarray

    @property
    def num_matches(self) -> int:
        return int(np.count_nonzero(self.pred_to_gt >= 0))


def match_instances(preds: Sequence[InstancePrediction], gts: Sequence[Polygon], iou_thresh: float,
                    ious: Optional[np.ndarray] = None, resolution: int = 8) -> Matching:
    """Score-ordered greedy matching to the highest-IoU unmatched GT.

    Ties on IoU go to the lower GT index. Only the ``MAX_DETS`` highest
    scoring predictions take part.
    """
    if ious is None:
        ious = iou_matrix([p.polygon for p in preds], gts, resolution)
    order = score_order([p.score for p in preds])[:MAX_DETS]
    pred_to_gt = np.full(len(preds), -1, dtype=int)
    taken = np.zeros(len(gts), dtype=bool)
    for k in order:
        best, best_iou = -1, -1.0
        for j in range(len(gts)):
            if taken[j] or ious[k, j] < iou_thresh:
                continue
            if ious[k, j] > best_iou:
                best, best_iou = j, ious[k, j]
        if best >= 0:
            taken[best] = True
            pred_to_gt[k] = best
    return Matching(order=order, pred_to_gt=pred_to_gt, ious=ious)


def interpolated_ap(tp_flags: np.ndarray, num_gt: int) -> Tuple[float, float]:
    """101-point interpolated AP and final recall for score-sorted TP flags."""
    if len(tp_flags) == 0:
        return 0.0, 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    # recall values are ratios of integers; absorb rounding at grid points
    idx = np.searchsorted(recall, RECALL_POINTS - 1e-12, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean()), float(recall[-1])


@dataclass
class EvalReport:
    ap: float
    ar: float
    ap50: float
    mean_polis: Optional[float]
    mean_ciou: Optional[float]
    per_instance: List[Tuple[Optional[float], Optional[float], bool]] = field(default_factory=list)
    per_threshold: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ar": self.ar,
            "ap50": self.ap50,
            "mean_polis": self.mean_polis,
            "mean_ciou": self.mean_ciou,
            "num_gt": len(self.per_instance),
            "num_matched": sum(1 for *_, m in self.per_instance if m),
            "per_threshold": {k: {"ap": v[0], "ar": v[1]} for k, v in self.per_threshold.items()},
            "per_instance": [
                {"polis": pl, "ciou": ci, "matched": m} for pl, ci, m in self.per_instance
            ],
        }

    def table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.4f}"

        head = ["AP", "AR", "AP50", "PoLiS", "C-IoU"]
        row = [fmt(self.ap), fmt(self.ar), fmt(self.ap50), fmt(self.mean_polis), fmt(self.mean_ciou)]
        width = [max(len(h), len(r)) for h, r in zip(head, row)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(head, width))
        line2 = "  ".join(r.rjust(w) for r, w in zip(row, width))
        return f"{line1}\n{line2}\n"


def ap_ar(preds: Sequence[Sequence[InstancePrediction]], gts: Sequence[Sequence[Polygon]],
          resolution: int = 8) -> EvalReport:
    """Pooled AP/AR over IoU thresholds 0.50:0.05:0.95 plus vector metrics at 0.5."""
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction scenes vs {len(gts)} ground-truth scenes")
    num_gt = sum(len(g) for g in gts)
    if num_gt == 0:
        raise UndefinedMetric("no ground-truth instances")

    ious = [iou_matrix([p.polygon for p in ps], gs, resolution) for ps, gs in zip(preds, gts)]
    aps, ars, per_threshold = [], [], {}
    per_instance: List[Tuple[Optional[float], Optional[float], bool]] = []
    for t in IOU_THRESHOLDS:
        scores, flags = [], []
        matchings = []
        for ps, gs, iou in zip(preds, gts, ious):
            m = match_instances(ps, gs, t, ious=iou)
            matchings.append(m)
            for k in m.order:
                scores.append(ps[k].score)
                flags.append(m.pred_to_gt[k] >= 0)
        order = score_order(scores)
        ap, ar = interpolated_ap(np.asarray(flags, dtype=bool)[order], num_gt)
        aps.append(ap)
        ars.append(ar)
        per_threshold[f"{t:.2f}"] = (ap, ar)
        if t == 0.5:
            per_instance = _vector_metrics(preds, gts, matchings, resolution)

    matched = [(pl, ci) for pl, ci, m in per_instance if m]
    return EvalReport(
        ap=float(np.mean(aps)),
        ar=float(np.mean(ars)),
        ap50=aps[0],
        mean_polis=float(np.mean([pl for pl, _ in matched])) if matched else None,
        mean_ciou=float(np.mean([ci for _, ci in matched])) if matched else None,
        per_instance=per_instance,
        per_threshold=per_threshold,
    )


def _vector_metrics(preds, gts, matchings, resolution):
    out = []
    for ps, gs, m in zip(preds, gts, matchings):
        gt_to_pred = {int(j): k for k, j in enumerate(m.pred_to_gt) if j >= 0}
        for j, g in enumerate(gs):
            k = gt_to_pred.get(j)
            if k is None:
                out.append((None, None, False))
                continue
            p = ps[k].polygon
            out.append((polis(p, g), ciou(p, g, iou=float(m.ious[k, j])), True))
    return out


def mean_angle_deviation(polygons: Sequence[Polygon]) -> float:
    """Mean absolute deviation of all interior angles from the nearest peak, in degrees."""
    if not polygons:
        return math.nan
    dev = np.concatenate([angle_peak_deviation(interior_angles(p)) for p in polygons])
    return float(np.mean(np.abs(dev)))
