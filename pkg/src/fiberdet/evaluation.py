"""Matching detections to ground truth and computing detection metrics.

Ellipse-level evaluation matches on pixel IoU; box-level evaluation first
maps both sides to their HBEs and matches on rectangle IoU. A detection is a
true positive when its IoU with its matched ground truth exceeds the
threshold. Matching is greedy and one-to-one: detections are visited in
descending score order (ties to the lower index) and each takes the unmatched
ground truth with the highest IoU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .geometry import Ellipse, HBox, angle_distance, hbe_of
from .raster import box_iou, pixel_iou

DEFAULT_MATCH_IOU = 0.5
MATCHING_RULE = "greedy one-to-one; detections by descending score, ties to lower index"
AVERAGING_RULE = "micro (TP/FP/FN and angle errors pooled across images)"


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_dets: tuple[int, ...]
    unmatched_gts: tuple[int, ...]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_dets)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


@dataclass(frozen=True)
class EvalReport:
    """Counts plus pooled orientation-error sums; ratios are derived.

    Orientation fields are None when no angle errors were recorded (box mode,
    or no true positives).
    """

    tp: int
    fp: int
    fn: int
    angle_abs_sum: float = 0.0
    angle_sq_sum: float = 0.0
    angle_count: int = 0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def ml1_rad(self) -> Optional[float]:
        return self.angle_abs_sum / self.angle_count if self.angle_count else None

    @property
    def mse_rad(self) -> Optional[float]:
        return self.angle_sq_sum / self.angle_count if self.angle_count else None

    @property
    def ml1_deg(self) -> Optional[float]:
        ml1 = self.ml1_rad
        return None if ml1 is None else ml1 * 180.0 / math.pi

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "ml1_rad": self.ml1_rad,
            "mse_rad": self.mse_rad,
            "ml1_deg": self.ml1_deg,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def _check_thresh(thresh: float) -> None:
    if not 0.0 < thresh < 1.0:
        raise InvalidArgument(f"match threshold must lie in (0, 1), got {thresh}")


def _greedy_match(scores: Sequence[float], det_boxes: np.ndarray, gt_boxes: np.ndarray,
                  iou_fn: Callable[[int, int], float], thresh: float) -> MatchResult:
    n_det, n_gt = len(scores), len(gt_boxes)
    order = sorted(range(n_det), key=lambda i: (-scores[i], i))
    gt_free = np.ones(n_gt, dtype=bool)
    pairs = []
    matched_dets = set()
    for i in order:
        if n_gt == 0:
            break
        d = det_boxes[i]
        # only ground truths whose boxes overlap this detection's box can have IoU > 0
        cand = np.nonzero(
            gt_free
            & (gt_boxes[:, 0] < d[2]) & (d[0] < gt_boxes[:, 2])
            & (gt_boxes[:, 1] < d[3]) & (d[1] < gt_boxes[:, 3])
        )[0]
        best_j, best_iou = -1, 0.0
        for j in cand:
            iou = iou_fn(i, int(j))
            if iou > best_iou:
                best_j, best_iou = int(j), iou
        if best_j >= 0 and best_iou > thresh:
            gt_free[best_j] = False
            matched_dets.add(i)
            pairs.append((i, best_j, best_iou))
    return MatchResult(
        tuple(pairs),
        tuple(i for i in range(n_det) if i not in matched_dets),
        tuple(int(j) for j in np.nonzero(gt_free)[0]),
    )


def _corners(boxes: Sequence[HBox]) -> np.ndarray:
    return np.array([b.corners() for b in boxes], dtype=np.float64).reshape(-1, 4)


def match_ellipses(dets: Sequence[tuple[Ellipse, float]], gts: Sequence[Ellipse],
                   width: int, height: int, thresh: float = DEFAULT_MATCH_IOU) -> MatchResult:
    """One-to-one matching on pixel IoU within a ``width x height`` image."""
    _check_thresh(thresh)
    det_e = [e for e, _ in dets]
    return _greedy_match(
        [s for _, s in dets],
        _corners([hbe_of(e) for e in det_e]),
        _corners([hbe_of(g) for g in gts]),
        lambda i, j: pixel_iou(det_e[i], gts[j], width, height),
        thresh,
    )


def match_boxes(dets: Sequence[tuple[Ellipse, float]], gts: Sequence[Ellipse],
                thresh: float = DEFAULT_MATCH_IOU) -> MatchResult:
    """One-to-one matching on rectangle IoU of the HBEs."""
    _check_thresh(thresh)
    det_b = [hbe_of(e) for e, _ in dets]
    gt_b = [hbe_of(g) for g in gts]
    return _greedy_match(
        [s for _, s in dets], _corners(det_b), _corners(gt_b),
        lambda i, j: box_iou(det_b[i], gt_b[j]),
        thresh,
    )


def ellipse_metrics(m: MatchResult, dets: Sequence[tuple[Ellipse, float]],
                    gts: Sequence[Ellipse]) -> EvalReport:
    abs_sum = sq_sum = 0.0
    for i, j, _ in m.pairs:
        d = angle_distance(dets[i][0].theta, gts[j].theta)
        abs_sum += d
        sq_sum += d * d
    return EvalReport(m.tp, m.fp, m.fn, abs_sum, sq_sum, m.tp)


def box_metrics(dets: Sequence[tuple[Ellipse, float]], gts: Sequence[Ellipse],
                width: Optional[int] = None, height: Optional[int] = None,
                thresh: float = DEFAULT_MATCH_IOU) -> EvalReport:
    """Box-level P/R/F; orientation is not evaluated in this mode.

    ``width``/``height`` are accepted for symmetry with the ellipse path;
    rectangle IoU does not depend on the image extent.
    """
    m = match_boxes(dets, gts, thresh)
    return EvalReport(m.tp, m.fp, m.fn)


def evaluate_image(dets: Sequence[tuple[Ellipse, float]], gts: Sequence[Ellipse],
                   width: int, height: int, mode: str = "ellipse",
                   thresh: float = DEFAULT_MATCH_IOU) -> EvalReport:
    if mode == "ellipse":
        return ellipse_metrics(match_ellipses(dets, gts, width, height, thresh), dets, gts)
    if mode == "box":
        return box_metrics(dets, gts, width, height, thresh)
    raise InvalidArgument(f"unknown evaluation mode {mode!r}")


def aggregate(reports: Sequence[EvalReport]) -> EvalReport:
    """Micro-average: pool counts and angle-error sums, then recompute ratios."""
    if not reports:
        raise InvalidArgument("cannot aggregate an empty list of reports")
    return EvalReport(
        tp=sum(r.tp for r in reports),
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        angle_abs_sum=math.fsum(r.angle_abs_sum for r in reports),
        angle_sq_sum=math.fsum(r.angle_sq_sum for r in reports),
        angle_count=sum(r.angle_count for r in reports),
    )


def _pct(v: Optional[float]) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Plain-text table with columns F(%), P(%), R(%), ML1_deg."""
    header = ("subset", "F(%)", "P(%)", "R(%)", "ML1_deg")
    body = [
        (name, _pct(r.f_measure), _pct(r.precision), _pct(r.recall),
         "-" if r.ml1_deg is None else f"{r.ml1_deg:.3f}")
        for name, r in rows
    ]
    widths = [max(len(str(row[k])) for row in [header, *body]) for k in range(len(header))]
    lines = []
    for row in [header, *body]:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
