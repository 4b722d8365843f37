"""Grayscale rasters, ellipse rasterization, IoU and global SSIM.

Images are 2-D ``numpy.uint8`` arrays indexed ``[row, col]`` = ``[y, x]``.
A pixel ``(i, j)`` (column ``i``, row ``j``) belongs to an ellipse when its
center ``(i + 0.5, j + 0.5)`` satisfies the ellipse inequality; there is no
partial coverage.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, InvalidArgument
from .geometry import Ellipse, HBox, hbe_of

SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2


def as_gray(img) -> np.ndarray:
    """Validate and return a 2-D uint8 image."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgument(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    return arr


def read_png(path) -> np.ndarray:
    """Read an image as 8-bit grayscale (color is converted with integer luma)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1"):
                im = im.convert("RGB").convert("L")
            else:
                im = im.convert("L")
            return np.array(im, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc


def write_png(path, img: np.ndarray) -> None:
    path = Path(path)
    arr = as_gray(img)
    try:
        Image.fromarray(arr).save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise DataError(f"{path}: cannot write image ({exc})") from exc


def pixel_span(lo: float, hi: float, size: int) -> tuple[int, int]:
    """Half-open index range of pixels whose centers may fall in ``[lo, hi]``."""
    start = max(0, math.ceil(lo - 0.5))
    stop = min(size, math.floor(hi - 0.5) + 1)
    return start, max(start, stop)


def ellipse_window(e: Ellipse, width: int, height: int) -> tuple[int, int, int, int]:
    """Pixel window ``(i0, j0, i1, j1)`` (half-open) covering the ellipse, clipped."""
    box = hbe_of(e)
    i0, i1 = pixel_span(box.x0, box.x1, width)
    j0, j1 = pixel_span(box.y0, box.y1, height)
    return i0, j0, i1, j1


def rasterize_window(e: Ellipse, i0: int, j0: int, i1: int, j1: int) -> np.ndarray:
    """Membership mask of the ellipse over pixel columns ``i0:i1`` and rows ``j0:j1``."""
    if i1 <= i0 or j1 <= j0:
        return np.zeros((max(0, j1 - j0), max(0, i1 - i0)), dtype=bool)
    c, s = math.cos(e.theta), math.sin(e.theta)
    dx = (np.arange(i0, i1, dtype=np.float64) + 0.5 - e.cx)[None, :]
    dy = (np.arange(j0, j1, dtype=np.float64) + 0.5 - e.cy)[:, None]
    u = (dx * c + dy * s) / e.semi_major
    v = (-dx * s + dy * c) / e.semi_minor
    return u * u + v * v <= 1.0


def rasterize(e: Ellipse, width: int, height: int) -> np.ndarray:
    """Full-image boolean mask (``height x width``) of the ellipse's pixels."""
    if width < 1 or height < 1:
        raise InvalidArgument("image dimensions must be positive")
    mask = np.zeros((height, width), dtype=bool)
    i0, j0, i1, j1 = ellipse_window(e, width, height)
    if i1 > i0 and j1 > j0:
        mask[j0:j1, i0:i1] = rasterize_window(e, i0, j0, i1, j1)
    return mask


def pixel_iou(a: Ellipse, b: Ellipse, width: int, height: int) -> float:
    """Intersection over union of the two ellipses' pixel sets inside the image."""
    if width < 1 or height < 1:
        raise InvalidArgument("image dimensions must be positive")
    ai0, aj0, ai1, aj1 = ellipse_window(a, width, height)
    bi0, bj0, bi1, bj1 = ellipse_window(b, width, height)
    # iterate only over the union of the two windows
    i0, j0 = min(ai0, bi0), min(aj0, bj0)
    i1, j1 = max(ai1, bi1), max(aj1, bj1)
    if i1 <= i0 or j1 <= j0:
        return 0.0
    ma = rasterize_window(a, i0, j0, i1, j1)
    mb = rasterize_window(b, i0, j0, i1, j1)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0
    return np.count_nonzero(ma & mb) / union


def box_iou(a: HBox, b: HBox) -> float:
    """Rectangle IoU on continuous coordinates."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Single-window SSIM over the whole patch, with population statistics."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"patch shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] < 4 or a.shape[1] < 4:
        raise InvalidArgument(f"patches must be at least 4x4, got {a.shape}")
    mu_a, mu_b = a.mean(), b.mean()
    da, db = a - mu_a, b - mu_b
    var_a = np.mean(da * da)
    var_b = np.mean(db * db)
    cov = np.mean(da * db)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(num / den)


def rotate180(patch: np.ndarray) -> np.ndarray:
    """Rotate a patch by 180 degrees about its center."""
    return np.ascontiguousarray(np.asarray(patch)[::-1, ::-1])
