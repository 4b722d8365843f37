"""Symmetry-aware RoI ranking, NMS and center-distance deduplication.

An elliptical object is unchanged by a 180 degree rotation about its center,
so the SSIM between an RoI crop and its rotated copy measures how well the
RoI is centered on an object. NMS ranks RoIs by ``S_obj + lambda * S_sym``
instead of the classification score alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .detect import Proposal
from .errors import InvalidArgument
from .geometry import Ellipse, HBox
from .raster import as_gray, rotate180, ssim

DEFAULT_LAMBDA = 1.0
DEFAULT_NMS_IOU = 0.7
DEFAULT_DEDUP_DIST = 20.0
MIN_CROP = 4


class SymmetryScore(NamedTuple):
    value: float
    degenerate: bool


@dataclass(frozen=True)
class RankedProposal:
    proposal: Proposal
    s_sym: float
    s_combined: float
    degenerate: bool = False

    @property
    def score(self) -> float:
        return self.proposal.score

    @property
    def ellipse(self) -> Ellipse:
        return self.proposal.ellipse

    @property
    def box(self) -> HBox:
        return self.proposal.box


def crop_box(img: np.ndarray, box: HBox) -> np.ndarray:
    """Pixels covered by ``box``: floor of the min corner to ceil of the max corner, clipped."""
    H, W = img.shape
    x0 = max(0, math.floor(box.x0))
    y0 = max(0, math.floor(box.y0))
    x1 = min(W, math.ceil(box.x1))
    y1 = min(H, math.ceil(box.y1))
    if x1 <= x0 or y1 <= y0:
        return img[0:0, 0:0]
    return img[y0:y1, x0:x1]


def symmetry_score(img: np.ndarray, box: HBox) -> SymmetryScore:
    """SSIM between the box crop and its 180 degree rotation.

    Crops smaller than 4x4 after clipping score 0 and are flagged degenerate.
    """
    crop = crop_box(as_gray(img), box)
    if crop.shape[0] < MIN_CROP or crop.shape[1] < MIN_CROP:
        return SymmetryScore(0.0, True)
    return SymmetryScore(ssim(crop, rotate180(crop)), False)


def combined_score(s_obj: float, s_sym: float, lam: float = DEFAULT_LAMBDA) -> float:
    return s_obj + lam * s_sym


def rank_proposals(img: np.ndarray, proposals: Sequence[Proposal],
                   lam: float = DEFAULT_LAMBDA) -> list[RankedProposal]:
    img = as_gray(img)
    out = []
    for p in proposals:
        sym = symmetry_score(img, p.box)
        out.append(RankedProposal(p, sym.value, combined_score(p.score, sym.value, lam),
                                  sym.degenerate))
    return out


def _box_array(props: Sequence[RankedProposal]) -> np.ndarray:
    return np.array([[r.box.x0, r.box.y0, r.box.x1, r.box.y1] for r in props],
                    dtype=np.float64).reshape(-1, 4)


def nms_symmetry(props: Sequence[RankedProposal],
                 iou_thresh: float = DEFAULT_NMS_IOU) -> list[RankedProposal]:
    """Greedy NMS keyed on the combined score.

    Ties on the combined score go to the higher classification score, then to
    the lower input index. Survivors are returned in selection order.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidArgument(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    n = len(props)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (-props[i].s_combined, -props[i].score, i))
    boxes = _box_array(props)[order]
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    alive = np.ones(n, dtype=bool)
    keep = []
    for pos in range(n):
        if not alive[pos]:
            continue
        keep.append(order[pos])
        rest = np.nonzero(alive[pos + 1:])[0] + pos + 1
        if rest.size == 0:
            break
        b = boxes[pos]
        iw = np.minimum(b[2], boxes[rest, 2]) - np.maximum(b[0], boxes[rest, 0])
        ih = np.minimum(b[3], boxes[rest, 3]) - np.maximum(b[1], boxes[rest, 1])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        iou = inter / (areas[pos] + areas[rest] - inter)
        alive[rest[iou > iou_thresh]] = False
    return [props[i] for i in keep]


def _dedup_indices(centers: np.ndarray, scores: Sequence[float], dist_thresh: float) -> list[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if kept:
            d = np.hypot(*(centers[kept] - centers[i]).T)
            if np.any(d < dist_thresh):
                continue
        kept.append(i)
    return kept


def dedup_final(items: Sequence[tuple[Ellipse, float]],
                dist_thresh: float = DEFAULT_DEDUP_DIST) -> list[tuple[Ellipse, float]]:
    """Keep the best-scoring ellipse per object, dropping any whose center lies
    closer than ``dist_thresh`` to an already kept one."""
    if dist_thresh <= 0:
        raise InvalidArgument("dist_thresh must be positive")
    if not items:
        return []
    centers = np.array([[e.cx, e.cy] for e, _ in items], dtype=np.float64)
    return [items[i] for i in _dedup_indices(centers, [s for _, s in items], dist_thresh)]


def rank_and_filter(img: np.ndarray, proposals: Sequence[Proposal],
                    lam: float = DEFAULT_LAMBDA, nms_iou: float = DEFAULT_NMS_IOU,
                    dedup_dist: float = DEFAULT_DEDUP_DIST) -> list[RankedProposal]:
    """Symmetry ranking, NMS and final dedup for one image's proposals."""
    if dedup_dist <= 0:
        raise InvalidArgument("dedup_dist must be positive")
    ranked = nms_symmetry(rank_proposals(img, proposals, lam), nms_iou)
    if not ranked:
        return []
    centers = np.array([[r.ellipse.cx, r.ellipse.cy] for r in ranked], dtype=np.float64)
    kept = _dedup_indices(centers, [r.s_combined for r in ranked], dedup_dist)
    return [ranked[i] for i in kept]
