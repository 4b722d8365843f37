"""Gaussian shape priors and synthetic fiber scenes.

Priors are fitted per parameter channel from a small annotated set, then
sampled to populate a background with non-overlapping ellipses. Every random
choice goes through an explicit ``numpy.random.Generator`` so a seed fully
determines a scene and its image.
"""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import ndimage
from PIL import Image

from .errors import ConfigError, InsufficientData, InvalidArgument
from .geometry import Ellipse, hbe_of
from .raster import ellipse_window, rasterize_window, read_png

log = logging.getLogger(__name__)

CHANNELS = ("semi_major", "semi_minor", "theta", "intensity")
MIN_SEMI_AXIS = 1.0
_MAX_SHAPE_DRAWS = 10_000


@dataclass(frozen=True)
class ChannelPrior:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.std)) or self.std < 0:
            raise InvalidArgument(f"invalid channel prior mean={self.mean} std={self.std}")


@dataclass(frozen=True)
class GaussianPrior:
    """Independent normal distribution for each shape/intensity channel."""

    semi_major: ChannelPrior
    semi_minor: ChannelPrior
    theta: ChannelPrior
    intensity: ChannelPrior

    def __post_init__(self) -> None:
        if self.semi_major.mean <= 0 or self.semi_minor.mean <= 0:
            raise InvalidArgument("semi-axis prior means must be positive")

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in CHANNELS}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianPrior":
        try:
            return cls(**{
                name: ChannelPrior(float(d[name]["mean"]), float(d[name]["std"]))
                for name in CHANNELS
            })
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed prior: {exc}") from exc


# Desk-scale default: bright fibers of radius ~8-20 px on a mid-gray background.
DEFAULT_PRIOR = GaussianPrior(
    semi_major=ChannelPrior(14.0, 3.0),
    semi_minor=ChannelPrior(11.5, 2.0),
    theta=ChannelPrior(math.pi / 2, 1.0),
    intensity=ChannelPrior(210.0, 12.0),
)


@dataclass(frozen=True)
class StainSpec:
    """Multiplicative darkening of random disks."""

    count: int = 1
    radius_range: tuple[float, float] = (30.0, 80.0)
    factor_range: tuple[float, float] = (0.4, 0.8)


@dataclass(frozen=True)
class BlurSpec:
    """Box blur of random sub-rectangles."""

    count: int = 1
    size_range: tuple[float, float] = (60.0, 160.0)
    kernel_radius: int = 3


@dataclass(frozen=True)
class SynthConfig:
    width: int = 646
    height: int = 484
    count: int = 50
    background_level: float = 128.0
    noise_std: float = 8.0
    background_image: Optional[str] = None
    allow_resample: bool = True
    margin: float = 2.0
    # optional hard bounds on sampled semi-axes (inclusive); None = unbounded
    semi_major_range: Optional[tuple[float, float]] = (8.0, 20.0)
    semi_minor_range: Optional[tuple[float, float]] = (8.0, 20.0)
    stains: tuple[StainSpec, ...] = ()
    blurs: tuple[BlurSpec, ...] = ()
    degraded_fraction: float = 1.0
    max_attempts: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError("image dimensions must be positive")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.margin < 0:
            raise ConfigError("margin must be >= 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if not 0.0 <= self.degraded_fraction <= 1.0:
            raise ConfigError("degraded_fraction must be in [0, 1]")
        for s in self.stains:
            if not (0 < s.factor_range[0] <= s.factor_range[1] < 1):
                raise ConfigError("stain factors must lie in (0, 1)")
        for b in self.blurs:
            if b.kernel_radius < 0:
                raise ConfigError("blur kernel radius must be >= 0")

    @property
    def attempt_budget(self) -> int:
        if self.max_attempts is not None:
            return self.max_attempts
        return 200 * self.count + 1000

    @property
    def has_degradations(self) -> bool:
        return any(s.count > 0 for s in self.stains) or any(b.count > 0 for b in self.blurs)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("semi_major_range", "semi_minor_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        d["stains"] = tuple(
            StainSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
            for s in d.get("stains", ())
        )
        d["blurs"] = tuple(
            BlurSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in b.items()})
            for b in d.get("blurs", ())
        )
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"unknown synth config field: {exc}") from exc


@dataclass(frozen=True)
class SceneGroundTruth:
    image_id: str
    width: int
    height: int
    objects: tuple[tuple[Ellipse, float], ...] = ()
    requested: int = 0
    attempts: int = 0

    @property
    def ellipses(self) -> list[Ellipse]:
        return [e for e, _ in self.objects]


def fit_priors(samples: Sequence[tuple[Ellipse, float]]) -> GaussianPrior:
    """Per-channel sample mean and (n - 1) standard deviation."""
    if len(samples) < 2:
        raise InsufficientData(f"need at least 2 samples to fit priors, got {len(samples)}")
    columns = {
        "semi_major": [e.semi_major for e, _ in samples],
        "semi_minor": [e.semi_minor for e, _ in samples],
        "theta": [e.theta for e, _ in samples],
        "intensity": [float(i) for _, i in samples],
    }
    # statistics.* is exact on floats, so identical samples give std == 0
    return GaussianPrior(**{
        name: ChannelPrior(float(statistics.mean(vals)), float(statistics.stdev(vals)))
        for name, vals in columns.items()
    })


def shape_stream(prior: GaussianPrior, rng: np.random.Generator) -> Iterator[tuple[float, float, float, float]]:
    """Raw ``(semi_major, semi_minor, theta, intensity)`` draws, before any rejection."""
    while True:
        yield (
            rng.normal(prior.semi_major.mean, prior.semi_major.std),
            rng.normal(prior.semi_minor.mean, prior.semi_minor.std),
            rng.normal(prior.theta.mean, prior.theta.std),
            rng.normal(prior.intensity.mean, prior.intensity.std),
        )


def _in_range(v: float, bounds: Optional[tuple[float, float]]) -> bool:
    return bounds is None or bounds[0] <= v <= bounds[1]


def _valid_shape(stream, cfg: SynthConfig) -> tuple[float, float, float, float]:
    for _ in range(_MAX_SHAPE_DRAWS):
        R, r, theta, inten = next(stream)
        if (MIN_SEMI_AXIS < r <= R
                and _in_range(R, cfg.semi_major_range)
                and _in_range(r, cfg.semi_minor_range)):
            return R, r, theta, float(np.clip(inten, 0.0, 255.0))
    raise ConfigError("prior and semi-axis bounds never produce a valid ellipse")


def sample_scene(prior: GaussianPrior, cfg: SynthConfig, rng: np.random.Generator,
                 image_id: str = "scene") -> SceneGroundTruth:
    """Place up to ``cfg.count`` non-overlapping ellipses at random.

    A placement is rejected when its HBE, inflated by ``cfg.margin``, meets
    the inflated HBE of an already placed ellipse. Sampling stops at the
    target count or when the attempt budget runs out.
    """
    W, H, m = cfg.width, cfg.height, cfg.margin
    objects: list[tuple[Ellipse, float]] = []
    boxes = np.empty((cfg.count, 4))  # inflated x0, y0, x1, y1
    stream = shape_stream(prior, rng)
    attempts = 0
    fitted = 0
    budget = cfg.attempt_budget
    while len(objects) < cfg.count and attempts < budget:
        attempts += 1
        R, r, theta, inten = _valid_shape(stream, cfg)
        probe = Ellipse(0.0, 0.0, theta, R, r)
        box = hbe_of(probe)
        if box.w > W or box.h > H:
            continue
        fitted += 1
        cx = rng.uniform(box.w / 2, W - box.w / 2)
        cy = rng.uniform(box.h / 2, H - box.h / 2)
        x0, y0 = cx - box.w / 2 - m, cy - box.h / 2 - m
        x1, y1 = cx + box.w / 2 + m, cy + box.h / 2 + m
        n = len(objects)
        if n:
            b = boxes[:n]
            hit = (x0 < b[:, 2]) & (b[:, 0] < x1) & (y0 < b[:, 3]) & (b[:, 1] < y1)
            if hit.any():
                continue
        boxes[n] = (x0, y0, x1, y1)
        objects.append((Ellipse(cx, cy, theta, R, r), inten))
    if cfg.count > 0 and fitted == 0:
        raise ConfigError(f"no ellipse drawn from the prior fits inside a {W}x{H} image")
    if len(objects) < cfg.count:
        log.warning("%s: placed %d of %d ellipses in %d attempts",
                    image_id, len(objects), cfg.count, attempts)
    return SceneGroundTruth(image_id, W, H, tuple(objects), cfg.count, attempts)


def _background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    W, H = cfg.width, cfg.height
    if cfg.background_image is None:
        bg = np.full((H, W), float(cfg.background_level))
        if cfg.noise_std > 0:
            bg += rng.normal(0.0, cfg.noise_std, size=(H, W))
        return np.clip(bg, 0.0, 255.0)
    src = read_png(cfg.background_image)
    sh, sw = src.shape
    if sw >= W and sh >= H:
        ox = int(rng.integers(0, sw - W + 1))
        oy = int(rng.integers(0, sh - H + 1))
        return src[oy:oy + H, ox:ox + W].astype(np.float64)
    if not cfg.allow_resample:
        raise ConfigError(
            f"background image {cfg.background_image} is {sw}x{sh}, smaller than {W}x{H}"
        )
    resized = Image.fromarray(src).resize((W, H), Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.float64)


def _apply_stain(canvas: np.ndarray, spec: StainSpec, rng: np.random.Generator) -> None:
    H, W = canvas.shape
    for _ in range(spec.count):
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        radius = rng.uniform(*spec.radius_range)
        factor = rng.uniform(*spec.factor_range)
        disk = Ellipse(cx, cy, 0.0, radius, radius)
        i0, j0, i1, j1 = ellipse_window(disk, W, H)
        inside = rasterize_window(disk, i0, j0, i1, j1)
        canvas[j0:j1, i0:i1][inside] *= factor


def _apply_blur(canvas: np.ndarray, spec: BlurSpec, rng: np.random.Generator) -> None:
    H, W = canvas.shape
    size = 2 * spec.kernel_radius + 1
    for _ in range(spec.count):
        bw = int(min(W, max(1, round(rng.uniform(*spec.size_range)))))
        bh = int(min(H, max(1, round(rng.uniform(*spec.size_range)))))
        x0 = int(rng.integers(0, W - bw + 1))
        y0 = int(rng.integers(0, H - bh + 1))
        region = canvas[y0:y0 + bh, x0:x0 + bw]
        canvas[y0:y0 + bh, x0:x0 + bw] = ndimage.uniform_filter(region, size=size, mode="nearest")


def render_scene(gt: SceneGroundTruth, cfg: SynthConfig, rng: np.random.Generator,
                 degrade: Optional[bool] = None) -> np.ndarray:
    """Paint a scene onto a background and apply configured degradations.

    ``degrade=None`` applies degradations whenever the config defines any.
    """
    canvas = _background(cfg, rng)
    for e, inten in gt.objects:
        i0, j0, i1, j1 = ellipse_window(e, gt.width, gt.height)
        inside = rasterize_window(e, i0, j0, i1, j1)
        canvas[j0:j1, i0:i1][inside] = round(inten)
    if degrade is None:
        degrade = cfg.has_degradations
    if degrade:
        for s in cfg.stains:
            _apply_stain(canvas, s, rng)
        for b in cfg.blurs:
            _apply_blur(canvas, b, rng)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


@dataclass
class SynthSample:
    scene: SceneGroundTruth
    image: np.ndarray
    degraded: bool = False


def scene_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-scene generators split from one master seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def synthesize_one(prior: GaussianPrior, cfg: SynthConfig, rng: np.random.Generator,
                   image_id: str) -> SynthSample:
    degraded = cfg.has_degradations and rng.random() < cfg.degraded_fraction
    scene = sample_scene(prior, cfg, rng, image_id=image_id)
    image = render_scene(scene, cfg, rng, degrade=degraded)
    return SynthSample(scene, image, degraded)


def write_sample(sample: SynthSample, out_dir) -> dict:
    """Write one sample's PNG and annotation CSV; return its manifest entry."""
    from .formats import write_annotations
    from .raster import write_png

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    sid = sample.scene.image_id
    img_rel = f"images/{sid}.png"
    ann_rel = f"annotations/{sid}.csv"
    write_png(out / img_rel, sample.image)
    write_annotations(out / ann_rel, sid, sample.scene.objects)
    return {"image": img_rel, "annotations": ann_rel, "degraded": bool(sample.degraded)}


def export_dataset(samples: Sequence[SynthSample], out_dir) -> dict:
    """Write PNGs, annotation CSVs and ``manifest.json`` under ``out_dir``."""
    from .formats import write_manifest

    entries = [write_sample(s, out_dir) for s in samples]
    return write_manifest(Path(out_dir) / "manifest.json", entries)


def load_scene(entry) -> SceneGroundTruth:
    """Rebuild a scene's ground truth from a manifest entry."""
    from .formats import read_annotations

    from .errors import DataError

    try:
        with Image.open(entry.image) as im:
            width, height = im.size
    except OSError as exc:
        raise DataError(f"{entry.image}: cannot read image ({exc})") from exc
    ids, rows = read_annotations(entry.annotations)
    stray = sorted(set(ids) - {entry.image_id})
    if stray:
        raise DataError(f"{entry.annotations}: rows for image(s) {stray}, expected {entry.image_id!r}")
    return SceneGroundTruth(entry.image_id, width, height, tuple(rows), len(rows), 0)
