"""Ellipse model, box conventions and regression offsets.

Coordinates are continuous pixel coordinates: the origin is the top-left
corner of the top-left pixel, x grows rightward, y grows downward and pixel
centers sit at half-integers. Angles are radians; an ellipse orientation is
the angle between its major axis and the image x axis, taken modulo pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgument

HALF_PI = math.pi / 2
CIRCLE_RTOL = 1e-9


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise InvalidArgument(f"expected a finite value, got {v!r}")


def canonicalize_angle(theta: float) -> float:
    """Reduce an orientation to [0, pi)."""
    _require_finite(theta)
    t = theta % math.pi
    # float modulo can land exactly on pi for tiny negative inputs
    if t >= math.pi:
        t = 0.0
    return t


def angle_distance(a: float, b: float) -> float:
    """Distance between two orientations on the pi-periodic circle, in [0, pi/2]."""
    d = abs(canonicalize_angle(a) - canonicalize_angle(b))
    return min(d, math.pi - d)


@dataclass(frozen=True)
class Ellipse:
    """Five-parameter ellipse ``[cx, cy, theta, R, r]`` with ``R >= r > 0``.

    ``theta`` is canonicalized on construction; circles get ``theta = 0``.
    Use :meth:`from_axes` when the two axis lengths may come in either order.
    """

    cx: float
    cy: float
    theta: float
    semi_major: float
    semi_minor: float

    def __post_init__(self) -> None:
        _require_finite(self.cx, self.cy, self.theta, self.semi_major, self.semi_minor)
        if self.semi_minor <= 0:
            raise InvalidArgument(f"semi_minor must be positive, got {self.semi_minor}")
        if self.semi_major < self.semi_minor:
            raise InvalidArgument(
                f"semi_major ({self.semi_major}) < semi_minor ({self.semi_minor}); "
                "use Ellipse.from_axes for unordered axes"
            )
        theta = canonicalize_angle(self.theta)
        if self.semi_major - self.semi_minor <= CIRCLE_RTOL * self.semi_major:
            theta = 0.0
        object.__setattr__(self, "cx", float(self.cx))
        object.__setattr__(self, "cy", float(self.cy))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "semi_major", float(self.semi_major))
        object.__setattr__(self, "semi_minor", float(self.semi_minor))

    @classmethod
    def from_axes(cls, cx: float, cy: float, theta: float, a: float, b: float) -> "Ellipse":
        """Build from semi-axis ``a`` along ``theta`` and ``b`` across it, in any order."""
        if b > a:
            a, b = b, a
            theta = theta + HALF_PI
        return cls(cx, cy, theta, a, b)

    @property
    def center(self) -> tuple[float, float]:
        return (self.cx, self.cy)

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor

    def is_circle(self) -> bool:
        return self.semi_major - self.semi_minor <= CIRCLE_RTOL * self.semi_major


@dataclass(frozen=True)
class HBox:
    """Axis-aligned box given by center and size."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        _require_finite(self.cx, self.cy, self.w, self.h)
        if self.w <= 0 or self.h <= 0:
            raise InvalidArgument(f"box sides must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "HBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def inflate(self, margin: float) -> "HBox":
        return HBox(self.cx, self.cy, self.w + 2 * margin, self.h + 2 * margin)

    def intersects(self, other: "HBox") -> bool:
        return (
            self.x0 < other.x1 and other.x0 < self.x1
            and self.y0 < other.y1 and other.y0 < self.y1
        )


@dataclass(frozen=True)
class OrientedBox:
    """Box with sides along ``theta`` (width) and ``theta + pi/2`` (height)."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float


@dataclass(frozen=True)
class RRoI:
    """An RoI reinterpreted as an oriented box at angle pi/2."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = HALF_PI

    def __post_init__(self) -> None:
        _require_finite(self.cx, self.cy, self.w, self.h)
        if self.w <= 0 or self.h <= 0:
            raise InvalidArgument(f"RRoI sides must be positive, got w={self.w}, h={self.h}")
        if self.theta != HALF_PI:
            raise InvalidArgument("RRoI angle is fixed at pi/2")


@dataclass(frozen=True)
class EllipseOffsets:
    t_x: float
    t_y: float
    t_w: float
    t_h: float
    t_theta: float


@dataclass(frozen=True)
class BoxOffsets:
    t_x: float
    t_y: float
    t_w: float
    t_h: float


def hbe_of(e: Ellipse) -> HBox:
    """Tightest axis-aligned box around an ellipse."""
    c, s = math.cos(e.theta), math.sin(e.theta)
    R2, r2 = e.semi_major ** 2, e.semi_minor ** 2
    w = 2 * math.sqrt(R2 * c * c + r2 * s * s)
    h = 2 * math.sqrt(R2 * s * s + r2 * c * c)
    return HBox(e.cx, e.cy, w, h)


def obe_of(e: Ellipse) -> OrientedBox:
    """Tightest box with sides along the ellipse's major and minor axes."""
    return OrientedBox(e.cx, e.cy, 2 * e.semi_major, 2 * e.semi_minor, e.theta)


def rotate_roi(roi: HBox) -> RRoI:
    """Rotate an RoI 90 degrees clockwise into an RRoI.

    The center and side lengths are unchanged; only the frame changes. The
    RRoI's width now runs along the image y axis, which is why the center
    offsets in :func:`encode_ellipse_offsets` swap x and y.
    """
    return RRoI(roi.cx, roi.cy, roi.w, roi.h)


def encode_ellipse_offsets(rroi: RRoI, target: Ellipse) -> EllipseOffsets:
    """Regression targets from an RRoI to the target ellipse's OBE.

    The target OBE sides are the full axis lengths ``2R`` and ``2r``.
    ``t_theta`` lies in [-1, 1] because the target angle is in [0, pi).
    """
    if rroi.w <= 0 or rroi.h <= 0:
        raise InvalidArgument("RRoI sides must be positive")
    return EllipseOffsets(
        t_x=(target.cy - rroi.cy) / rroi.w,
        t_y=-(target.cx - rroi.cx) / rroi.h,
        t_w=math.log(2 * target.semi_major / rroi.w),
        t_h=math.log(2 * target.semi_minor / rroi.h),
        t_theta=(target.theta - HALF_PI) / HALF_PI,
    )


def decode_ellipse_offsets(rroi: RRoI, off: EllipseOffsets) -> Ellipse:
    """Inverse of :func:`encode_ellipse_offsets`.

    Regressed axes may come out unordered; they are swapped (and the angle
    turned by pi/2) so the result is always a valid :class:`Ellipse`.
    """
    _require_finite(off.t_x, off.t_y, off.t_w, off.t_h, off.t_theta)
    cx = rroi.cx - off.t_y * rroi.h
    cy = rroi.cy + off.t_x * rroi.w
    a = rroi.w * math.exp(off.t_w) / 2
    b = rroi.h * math.exp(off.t_h) / 2
    theta = HALF_PI + off.t_theta * HALF_PI
    return Ellipse.from_axes(cx, cy, theta, a, b)


def encode_box_offsets(anchor: HBox, target: HBox) -> BoxOffsets:
    """Standard two-stage-detector deltas from an anchor to a target box."""
    if anchor.w <= 0 or anchor.h <= 0 or target.w <= 0 or target.h <= 0:
        raise InvalidArgument("box sides must be positive")
    return BoxOffsets(
        t_x=(target.cx - anchor.cx) / anchor.w,
        t_y=(target.cy - anchor.cy) / anchor.h,
        t_w=math.log(target.w / anchor.w),
        t_h=math.log(target.h / anchor.h),
    )


def decode_box_offsets(anchor: HBox, off: BoxOffsets) -> HBox:
    if anchor.w <= 0 or anchor.h <= 0:
        raise InvalidArgument("anchor sides must be positive")
    _require_finite(off.t_x, off.t_y, off.t_w, off.t_h)
    return HBox(
        anchor.cx + off.t_x * anchor.w,
        anchor.cy + off.t_y * anchor.h,
        anchor.w * math.exp(off.t_w),
        anchor.h * math.exp(off.t_h),
    )
