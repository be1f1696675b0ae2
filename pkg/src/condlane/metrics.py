"""Evaluation: stroke-mask IoU with optimal matching, and fixed-row accuracy.

The rasterizer is the contract both for scoring and for test oracles: a pixel
(px, py) belongs to a lane's mask iff its squared distance to the polyline is
<= (line_width/2)^2, with distances measured to segments including endpoints,
so joins and caps are round. Oracles reproduce this formula with scalar
arithmetic; the vectorized path below must stay expression-identical to keep
the equality bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AnnotationFormatError
from .geometry import ImageSpec, LanePolyline

CULANE_REFERENCE_WIDTH = 1640
CULANE_REFERENCE_LINE_WIDTH = 30


def default_line_width(image: ImageSpec) -> int:
    """Stroke width scaled from the 30 px convention at 1640 px wide frames."""
    return max(1, round(CULANE_REFERENCE_LINE_WIDTH * image.width / CULANE_REFERENCE_WIDTH))


@dataclass(frozen=True)
class MatchConfig:
    eval_size: ImageSpec
    line_width: int
    iou_threshold: float = 0.5

    def __post_init__(self):
        if self.line_width < 1:
            raise ValueError("line_width must be >= 1")
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ValueError("iou_threshold must be in (0, 1]")

    @classmethod
    def for_image(cls, image: ImageSpec, iou_threshold: float = 0.5) -> "MatchConfig":
        return cls(eval_size=image, line_width=default_line_width(image),
                   iou_threshold=iou_threshold)


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    by_category: Dict[str, "EvalReport"] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int,
                    by_category: Optional[Dict[str, "EvalReport"]] = None) -> "EvalReport":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall > 0 else 0.0)
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall,
                   f1=f1, by_category=by_category or {})


def rasterize_lane(lane: LanePolyline, image: ImageSpec, line_width: float) -> np.ndarray:
    """Boolean (H, W) mask of the stroked polyline. See module docstring."""
    h, w = image.height, image.width
    mask = np.zeros((h, w), dtype=bool)
    r = line_width / 2.0
    r2 = r * r
    pts = lane.points
    for k in range(len(pts) - 1):
        x1, y1 = pts[k]
        x2, y2 = pts[k + 1]
        xmin = max(int(math.floor(min(x1, x2) - r)), 0)
        xmax = min(int(math.ceil(max(x1, x2) + r)), w - 1)
        ymin = max(int(math.floor(min(y1, y2) - r)), 0)
        ymax = min(int(math.ceil(max(y1, y2) + r)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        ys, xs = np.mgrid[ymin:ymax + 1, xmin:xmax + 1]
        vx = x2 - x1
        vy = y2 - y1
        l2 = vx * vx + vy * vy
        t = np.clip(((xs - x1) * vx + (ys - y1) * vy) / l2, 0.0, 1.0)
        dx = xs - (x1 + t * vx)
        dy = ys - (y1 + t * vy)
        mask[ymin:ymax + 1, xmin:xmax + 1] |= dx * dx + dy * dy <= r2
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def lane_iou(a: LanePolyline, b: LanePolyline, cfg: MatchConfig) -> float:
    return mask_iou(rasterize_lane(a, cfg.eval_size, cfg.line_width),
                    rasterize_lane(b, cfg.eval_size, cfg.line_width))


def iou_matrix(preds: Sequence[LanePolyline], gts: Sequence[LanePolyline],
               cfg: MatchConfig) -> np.ndarray:
    pred_masks = [rasterize_lane(p, cfg.eval_size, cfg.line_width) for p in preds]
    gt_masks = [rasterize_lane(g, cfg.eval_size, cfg.line_width) for g in gts]
    out = np.zeros((len(preds), len(gts)))
    for i, pm in enumerate(pred_masks):
        for j, gm in enumerate(gt_masks):
            out[i, j] = mask_iou(pm, gm)
    return out


def match_counts(iou: np.ndarray, threshold: float) -> tuple:
    """(tp, fp, fn) from the assignment maximizing total IoU."""
    n_pred, n_gt = iou.shape
    if n_pred == 0 or n_gt == 0:
        return 0, n_pred, n_gt
    rows, cols = linear_sum_assignment(-iou)
    tp = int(np.sum(iou[rows, cols] >= threshold))
    return tp, n_pred - tp, n_gt - tp


def match_and_score(preds: Sequence[Sequence[LanePolyline]],
                    gts: Sequence[Sequence[LanePolyline]],
                    cfg: MatchConfig,
                    categories: Optional[Sequence[str]] = None) -> EvalReport:
    """Dataset-level report: per-image optimal matching, aggregated counts.

    preds and gts are parallel per-image lists; categories optionally tags
    each image for the per-category breakdown.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    if categories is not None and len(categories) != len(preds):
        raise ValueError("categories must tag every image")
    totals = [0, 0, 0]
    per_cat: Dict[str, List[int]] = {}
    for idx, (p, g) in enumerate(zip(preds, gts)):
        tp, fp, fn = match_counts(iou_matrix(p, g, cfg), cfg.iou_threshold)
        totals[0] += tp
        totals[1] += fp
        totals[2] += fn
        if categories is not None:
            bucket = per_cat.setdefault(categories[idx], [0, 0, 0])
            bucket[0] += tp
            bucket[1] += fp
            bucket[2] += fn
    breakdown = {name: EvalReport.from_counts(*c) for name, c in sorted(per_cat.items())}
    return EvalReport.from_counts(*totals, by_category=breakdown)


def format_report(report: EvalReport) -> str:
    """One record per line, fixed field order, total first."""
    def line(tag, r):
        return (f"{tag} tp={r.tp} fp={r.fp} fn={r.fn} "
                f"precision={r.precision:.6f} recall={r.recall:.6f} f1={r.f1:.6f}")
    out = [line("total", report)]
    for name in sorted(report.by_category):
        out.append(line(f"category={name}", report.by_category[name]))
    return "\n".join(out)


class RowAccuracyReport(NamedTuple):
    accuracy: float
    fp_rate: float
    fn_rate: float
    f1: float


def lane_to_h_samples(lane: LanePolyline, h_samples: Sequence[float]) -> np.ndarray:
    """Sample a lane's x at fixed row ordinates; NaN outside its y-extent."""
    ys = np.asarray(h_samples, dtype=float)
    out = np.full(ys.shape, np.nan)
    inside = (ys >= lane.ys.min()) & (ys <= lane.ys.max())
    out[inside] = [lane.x_at(float(y)) for y in ys[inside]]
    return out


def _lane_accuracy(pred_xs: np.ndarray, gt_xs: np.ndarray, pixel_tol: float) -> tuple:
    """(correct, total) gt points for one pred/gt pairing."""
    gt_pts = ~np.isnan(gt_xs)
    total = int(gt_pts.sum())
    if total == 0:
        return 0, 0
    hit = gt_pts & ~np.isnan(pred_xs) & (np.abs(pred_xs - gt_xs) <= pixel_tol)
    return int(hit.sum()), total


def tusimple_score(preds: Sequence[Sequence[np.ndarray]],
                   gts: Sequence[Sequence[np.ndarray]],
                   pixel_tol: float = 20.0,
                   lane_acc_threshold: float = 0.85) -> RowAccuracyReport:
    """Fixed-row accuracy over a dataset of images.

    Each image supplies pred and gt lanes as x arrays on one shared row grid
    (NaN where a lane has no point). A gt point counts as correct when the
    matched prediction is within pixel_tol; a lane is a true positive only
    when its own point accuracy strictly exceeds lane_acc_threshold.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same images")
    sum_correct = 0
    sum_points = 0
    tp = 0
    n_pred_total = 0
    n_gt_total = 0
    for p_lanes, g_lanes in zip(preds, gts):
        lens = {len(x) for x in list(p_lanes) + list(g_lanes)}
        if len(lens) > 1:
            raise AnnotationFormatError("lanes in one image must share the row grid")
        n_pred_total += len(p_lanes)
        n_gt_total += len(g_lanes)
        for g in g_lanes:
            sum_points += int((~np.isnan(np.asarray(g, float))).sum())
        if not g_lanes or not p_lanes:
            continue
        acc = np.zeros((len(p_lanes), len(g_lanes)))
        correct = np.zeros_like(acc, dtype=int)
        for j, g in enumerate(g_lanes):
            for i, p in enumerate(p_lanes):
                c, t = _lane_accuracy(np.asarray(p, float), np.asarray(g, float), pixel_tol)
                correct[i, j] = c
                acc[i, j] = c / t if t > 0 else 0.0
        rows, cols = linear_sum_assignment(-acc)
        for i, j in zip(rows, cols):
            sum_correct += correct[i, j]
            if acc[i, j] > lane_acc_threshold:
                tp += 1
    fp = n_pred_total - tp
    fn = n_gt_total - tp
    accuracy = sum_correct / sum_points if sum_points > 0 else 0.0
    fp_rate = fp / n_pred_total if n_pred_total > 0 else 0.0
    fn_rate = fn / n_gt_total if n_gt_total > 0 else 0.0
    precision = tp / n_pred_total if n_pred_total > 0 else 0.0
    recall = tp / n_gt_total if n_gt_total > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return RowAccuracyReport(accuracy=accuracy, fp_rate=fp_rate, fn_rate=fn_rate, f1=f1)
