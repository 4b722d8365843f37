"""Detection backends that turn an image (or ground truth) into scored proposals.

``detect_moments`` is a classical segment-then-fit detector: Otsu threshold,
8-connected components, and an ellipse from each component's second
moments. ``propose_oracle`` perturbs ground truth and exists to drive the
ranking and evaluation stages without a trained network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import DataError, InvalidArgument
from .geometry import Ellipse, HBox, canonicalize_angle, hbe_of
from .raster import as_gray, ellipse_window, rasterize_window
from .synth import SceneGroundTruth

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Proposal:
    """A scored five-parameter hypothesis and its axis-aligned box."""

    box: HBox
    ellipse: Ellipse
    score: float
    border: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgument(f"proposal score must lie in [0, 1], got {self.score}")

    @classmethod
    def from_ellipse(cls, e: Ellipse, score: float, border: bool = False) -> "Proposal":
        return cls(hbe_of(e), e, score, border)


@dataclass(frozen=True)
class MomentsConfig:
    threshold: Optional[float] = None  # None: Otsu
    min_area: int = 30
    polarity: str = "bright"  # "bright": foreground > threshold; "dark": foreground <= threshold

    def __post_init__(self) -> None:
        if self.polarity not in ("bright", "dark"):
            raise InvalidArgument(f"polarity must be 'bright' or 'dark', got {self.polarity!r}")
        if self.min_area < 1:
            raise InvalidArgument("min_area must be >= 1")


def otsu_threshold(img: np.ndarray) -> Optional[int]:
    """Gray level ``t`` maximizing between-class variance of ``{<= t}`` vs ``{> t}``.

    Returns None for a single-valued image, which has no meaningful split.
    """
    hist = np.bincount(as_gray(img).ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * levels)
    total = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (total - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def _moment_ellipse(n: float, sx: float, sy: float, sxx: float, syy: float,
                    sxy: float) -> Optional[Ellipse]:
    cx, cy = sx / n, sy / n
    a = sxx / n - cx * cx
    c = syy / n - cy * cy
    b = sxy / n - cx * cy
    half_tr = (a + c) / 2
    disc = math.sqrt(((a - c) / 2) ** 2 + b * b)
    lam1, lam2 = half_tr + disc, half_tr - disc
    if lam2 <= 0:
        return None
    # A solid ellipse with semi-axes R, r has central second moments R^2/4 and
    # r^2/4 along its axes (integrate x^2 over the disk, divide by pi*R*r), so
    # each semi-axis is twice the square root of the matching eigenvalue.
    theta = 0.5 * math.atan2(2 * b, a - c)
    return Ellipse(cx, cy, canonicalize_angle(theta), 2 * math.sqrt(lam1), 2 * math.sqrt(lam2))


def detect_moments(img: np.ndarray, cfg: MomentsConfig = MomentsConfig()) -> list[Proposal]:
    """Segment, label and fit one ellipse per connected component.

    The score is the pixel IoU between the component and the rasterized
    fitted ellipse, so solid elliptical blobs score near 1 and other shapes
    (rectangles, merged blobs) score lower.
    """
    img = as_gray(img)
    H, W = img.shape
    t = cfg.threshold if cfg.threshold is not None else otsu_threshold(img)
    if t is None:
        return []
    fg = img > t if cfg.polarity == "bright" else img <= t
    labels, n = ndimage.label(fg, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    px = xs + 0.5
    py = ys + 0.5
    cnt = np.bincount(lab, minlength=n + 1)
    sx = np.bincount(lab, px, n + 1)
    sy = np.bincount(lab, py, n + 1)
    sxx = np.bincount(lab, px * px, n + 1)
    syy = np.bincount(lab, py * py, n + 1)
    sxy = np.bincount(lab, px * py, n + 1)
    slices = ndimage.find_objects(labels)

    out: list[Proposal] = []
    for k in range(1, n + 1):
        if cnt[k] < cfg.min_area:
            continue
        e = _moment_ellipse(cnt[k], sx[k], sy[k], sxx[k], syy[k], sxy[k])
        if e is None:
            continue
        rs, cs = slices[k - 1]
        border = rs.start == 0 or cs.start == 0 or rs.stop == H or cs.stop == W
        ei0, ej0, ei1, ej1 = ellipse_window(e, W, H)
        i0, j0 = min(cs.start, ei0), min(rs.start, ej0)
        i1, j1 = max(cs.stop, ei1), max(rs.stop, ej1)
        comp = labels[j0:j1, i0:i1] == k
        fit = rasterize_window(e, i0, j0, i1, j1)
        union = np.count_nonzero(comp | fit)
        score = np.count_nonzero(comp & fit) / union if union else 0.0
        out.append(Proposal(hbe_of(e), e, float(min(1.0, max(0.0, score))), bool(border)))
    return out


@dataclass(frozen=True)
class OracleConfig:
    k: int = 1
    sigma_center: float = 0.0
    sigma_scale: float = 0.0
    sigma_theta: float = 0.0
    false_positives: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise InvalidArgument("oracle k must be >= 1")
        if min(self.sigma_center, self.sigma_scale, self.sigma_theta) < 0:
            raise InvalidArgument("oracle noise levels must be >= 0")
        if self.false_positives < 0:
            raise InvalidArgument("false_positives must be >= 0")


def propose_oracle(gt: SceneGroundTruth, cfg: OracleConfig,
                   rng: np.random.Generator) -> list[Proposal]:
    """Jittered copies of each ground-truth ellipse, plus optional false positives.

    True-positive scores are drawn from U(0.5, 1); false positives are placed
    uniformly in the image with scores from U(0.1, 0.6).
    """
    gt_ellipses = gt.ellipses
    width, height = gt.width, gt.height
    out: list[Proposal] = []
    for g in gt_ellipses:
        for _ in range(cfg.k):
            dx, dy = rng.normal(0.0, cfg.sigma_center, 2)
            sa, sb = np.exp(rng.normal(0.0, cfg.sigma_scale, 2))
            dt = rng.normal(0.0, cfg.sigma_theta)
            score = rng.uniform(0.5, 1.0)
            e = Ellipse.from_axes(g.cx + dx, g.cy + dy, g.theta + dt,
                                  g.semi_major * sa, g.semi_minor * sb)
            out.append(Proposal.from_ellipse(e, float(score)))
    for _ in range(cfg.false_positives):
        if gt_ellipses:
            ref = gt_ellipses[int(rng.integers(len(gt_ellipses)))]
            a, b = ref.semi_major, ref.semi_minor
        else:
            a, b = 10.0, 8.0
        e = Ellipse(rng.uniform(0, width), rng.uniform(0, height),
                    rng.uniform(0, math.pi), a, b)
        out.append(Proposal.from_ellipse(e, float(rng.uniform(0.1, 0.6))))
    return out


def proposals_from_rows(rows: Sequence[tuple[Ellipse, float]], source: str = "") -> list[Proposal]:
    """Wrap externally produced ``(ellipse, score)`` rows, e.g. a CNN's output."""
    out = []
    for e, score in rows:
        if not 0.0 <= score <= 1.0:
            raise DataError(f"{source}: proposal score {score} outside [0, 1]")
        out.append(Proposal.from_ellipse(e, score))
    return out
