"""Command-line interface: fit-priors, synth, detect, eval, overlay.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .detect import MomentsConfig, OracleConfig, detect_moments, propose_oracle, proposals_from_rows
from .errors import ConfigError, DataError, FiberDetError, InsufficientData, InvalidArgument
from .evaluation import (AVERAGING_RULE, DEFAULT_MATCH_IOU, MATCHING_RULE, aggregate,
                         evaluate_image, format_table)
from .formats import read_annotations, read_detections, read_manifest, write_detections, write_manifest
from .geometry import Ellipse
from .raster import read_png, write_png
from .ranking import DEFAULT_DEDUP_DIST, DEFAULT_LAMBDA, DEFAULT_NMS_IOU, rank_and_filter
from .synth import (DEFAULT_PRIOR, BlurSpec, GaussianPrior, StainSpec, SynthConfig, fit_priors,
                    load_scene, synthesize_one, write_sample)

log = logging.getLogger("fiberdet")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PARTIAL = 3

FULL_SCALE = {"num_images": 300, "width": 1292, "height": 968, "count": 500}


class UsageError(FiberDetError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jobs_default() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Ordered map, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"{path}: cannot write ({exc})") from exc


# -- fit-priors ----------------------------------------------------------------

def cmd_fit_priors(args) -> int:
    samples = []
    for path in args.annotations:
        _, rows = read_annotations(path)
        samples.extend(rows)
    prior = fit_priors(samples)
    text = json.dumps(prior.to_dict(), indent=2) + "\n"
    if args.out:
        _write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    log.info("fitted priors from %d samples", len(samples))
    return EXIT_OK


# -- synth ---------------------------------------------------------------------

_SYNTH_FLAGS = {
    "width": "width", "height": "height", "count": "count", "margin": "margin",
    "noise_std": "noise_std", "background_level": "background_level",
    "background_image": "background_image", "degraded_fraction": "degraded_fraction",
}


def _synth_config(args) -> SynthConfig:
    base = SynthConfig.from_dict(_read_json(args.config)) if args.config else SynthConfig()
    changes = {}
    if args.full_scale:
        changes.update(width=FULL_SCALE["width"], height=FULL_SCALE["height"],
                       count=FULL_SCALE["count"])
    for flag, field_name in _SYNTH_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            changes[field_name] = value
    if args.stains is not None:
        changes["stains"] = (StainSpec(count=args.stains),) if args.stains else ()
    if args.blurs is not None:
        changes["blurs"] = (BlurSpec(count=args.blurs),) if args.blurs else ()
    changes["seed"] = args.seed
    return replace(base, **changes)


@dataclass(frozen=True)
class _SynthJob:
    prior: GaussianPrior
    cfg: SynthConfig
    seed: np.random.SeedSequence
    image_id: str
    out: str


def _synth_worker(job: _SynthJob) -> dict:
    sample = synthesize_one(job.prior, job.cfg, np.random.default_rng(job.seed), job.image_id)
    return write_sample(sample, job.out)


def cmd_synth(args) -> int:
    prior = GaussianPrior.from_dict(_read_json(args.priors)) if args.priors else DEFAULT_PRIOR
    cfg = _synth_config(args)
    n = args.num_images
    if n is None:
        n = FULL_SCALE["num_images"] if args.full_scale else 10
    if n < 0:
        raise UsageError("--num-images must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n)
    jobs = [_SynthJob(prior, cfg, seeds[k], f"{args.prefix}_{k:04d}", str(out)) for k in range(n)]
    entries = parallel_map(_synth_worker, jobs, args.jobs)
    write_manifest(out / "manifest.json", entries)
    log.info("wrote %d images to %s", n, out)
    return EXIT_OK


# -- detect --------------------------------------------------------------------

@dataclass(frozen=True)
class _DetectJob:
    entry: object
    backend: str
    moments: MomentsConfig
    oracle: OracleConfig
    seed: Optional[np.random.SeedSequence]
    proposals_dir: Optional[str]
    lam: float
    nms_iou: float
    dedup_dist: float
    drop_border: bool
    out: str


def _detect_worker(job: _DetectJob) -> tuple[str, Optional[str], int]:
    image_id = job.entry.image_id
    try:
        img = read_png(job.entry.image)
        if job.backend == "moments":
            props = detect_moments(img, job.moments)
            if job.drop_border:
                props = [p for p in props if not p.border]
        elif job.backend == "oracle":
            scene = load_scene(job.entry)
            props = propose_oracle(scene, job.oracle, np.random.default_rng(job.seed))
        else:
            path = Path(job.proposals_dir) / f"{image_id}.csv"
            ids, rows = read_detections(path)
            if any(i != image_id for i in ids):
                raise DataError(f"{path}: rows belong to another image")
            props = proposals_from_rows(rows, str(path))
        kept = rank_and_filter(img, props, job.lam, job.nms_iou, job.dedup_dist)
        write_detections(Path(job.out) / f"{image_id}.csv", image_id,
                         [(r.ellipse, r.s_combined) for r in kept])
        return image_id, None, len(kept)
    except FiberDetError as exc:
        return image_id, str(exc), 0


def cmd_detect(args) -> int:
    if not 0 < args.nms_iou < 1:
        raise UsageError("--nms-iou must lie in (0, 1)")
    if args.dedup_dist <= 0:
        raise UsageError("--dedup-dist must be positive")
    if args.backend == "oracle" and args.seed is None:
        raise UsageError("--seed is required with the oracle backend")
    if args.backend == "file" and not args.proposals:
        raise UsageError("--proposals is required with the file backend")
    entries = read_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = (np.random.SeedSequence(args.seed).spawn(len(entries))
             if args.seed is not None else [None] * len(entries))
    moments = MomentsConfig(args.threshold, args.min_area, args.polarity)
    oracle = OracleConfig(args.oracle_k, args.oracle_sigma_center, args.oracle_sigma_scale,
                          args.oracle_sigma_theta, args.oracle_fps)
    jobs = [
        _DetectJob(e, args.backend, moments, oracle, seeds[k], args.proposals,
                   args.lam, args.nms_iou, args.dedup_dist, args.drop_border, str(out))
        for k, e in enumerate(entries)
    ]
    results = parallel_map(_detect_worker, jobs, args.jobs)
    failed = [(i, err) for i, err, _ in results if err is not None]
    for image_id, err in failed:
        log.error("%s: %s", image_id, err)
    log.info("detected %d ellipses in %d images", sum(n for *_, n in results), len(results))
    if failed:
        return EXIT_PARTIAL if len(failed) < len(results) else EXIT_DATA
    return EXIT_OK


# -- eval ----------------------------------------------------------------------

@dataclass(frozen=True)
class _EvalJob:
    entry: object
    det_path: str
    mode: str
    thresh: float


def _eval_worker(job: _EvalJob):
    scene = load_scene(job.entry)
    ids, dets = read_detections(job.det_path)
    stray = sorted(set(ids) - {scene.image_id})
    if stray:
        raise DataError(f"{job.det_path}: rows for image(s) {stray}, expected {scene.image_id!r}")
    return evaluate_image(dets, scene.ellipses, scene.width, scene.height, job.mode, job.thresh)


def cmd_eval(args) -> int:
    if not 0 < args.match_iou < 1:
        raise UsageError("--match-iou must lie in (0, 1)")
    entries = read_manifest(args.manifest)
    det_dir = Path(args.detections)
    expected = {e.image_id for e in entries}
    present = {p.stem for p in det_dir.glob("*.csv")} if det_dir.is_dir() else set()
    missing = sorted(expected - present)
    extra = sorted(present - expected)
    if missing or extra:
        raise DataError(
            f"detections in {det_dir} do not match manifest {args.manifest}: "
            f"missing {missing[:5]}{'...' if len(missing) > 5 else ''}, "
            f"unexpected {extra[:5]}{'...' if len(extra) > 5 else ''}"
        )
    jobs = [_EvalJob(e, str(det_dir / f"{e.image_id}.csv"), args.mode, args.match_iou)
            for e in entries]
    reports = parallel_map(_eval_worker, jobs, args.jobs)
    summary = aggregate(reports) if reports else None
    rows = []
    if summary is not None:
        rows.append(("all", summary))
        deg = [r for r, e in zip(reports, entries) if e.degraded]
        clean = [r for r, e in zip(reports, entries) if not e.degraded]
        if deg and clean:
            rows += [("clean", aggregate(clean)), ("degraded", aggregate(deg))]
    doc = {
        "mode": args.mode,
        "match_iou": args.match_iou,
        "matching": MATCHING_RULE,
        "averaging": AVERAGING_RULE,
        "summary": summary.to_dict() if summary else None,
        "subsets": {name: r.to_dict() for name, r in rows},
        "images": [
            {"image": e.image_id, "degraded": e.degraded, **r.to_dict()}
            for e, r in zip(entries, reports)
        ],
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.json", json.dumps(doc, indent=2) + "\n")
    _write_text(out / "table.txt", format_table(rows))
    sys.stdout.write(format_table(rows))
    return EXIT_OK


# -- overlay -------------------------------------------------------------------

def draw_outline(img: np.ndarray, e: Ellipse, value: int = 255) -> None:
    """Draw a 1-px outline by sampling the parametric boundary at <= 0.25 px steps."""
    H, W = img.shape
    n = max(16, math.ceil(2 * math.pi * e.semi_major / 0.25))
    t = (np.arange(n) + 0.5) * (2 * math.pi / n)
    c, s = math.cos(e.theta), math.sin(e.theta)
    u, v = e.semi_major * np.cos(t), e.semi_minor * np.sin(t)
    x = e.cx + u * c - v * s
    y = e.cy + u * s + v * c
    i, j = np.floor(x).astype(np.int64), np.floor(y).astype(np.int64)
    ok = (i >= 0) & (i < W) & (j >= 0) & (j < H)
    img[j[ok], i[ok]] = value


def _read_any_ellipses(path) -> list[Ellipse]:
    try:
        _, rows = read_detections(path)
    except DataError as first:
        try:
            _, rows = read_annotations(path)
        except DataError:
            raise first
    return [e for e, _ in rows]


def cmd_overlay(args) -> int:
    img = read_png(args.image).copy()
    for e in _read_any_ellipses(args.ellipses):
        draw_outline(img, e, args.value)
    write_png(args.out, img)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="fiberdet", description="Elliptical fiber detection toolkit.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fp = sub.add_parser("fit-priors", formatter_class=fmt,
                        help="fit per-parameter Gaussian priors from annotations")
    fp.add_argument("annotations", nargs="+", help="annotation CSV file(s)")
    fp.add_argument("-o", "--out", default=None, help="priors JSON path (stdout if omitted)")
    fp.set_defaults(func=cmd_fit_priors)

    d = SynthConfig()
    sp = sub.add_parser("synth", formatter_class=fmt, help="generate a synthetic dataset")
    sp.add_argument("--seed", type=int, required=True, help="master RNG seed")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--priors", default=None, help="priors JSON (built-in desk prior if omitted)")
    sp.add_argument("--config", default=None, help="SynthConfig JSON; flags below override it")
    sp.add_argument("--num-images", type=int, default=None,
                    help="number of images (10, or 300 with --full-scale)")
    sp.add_argument("--full-scale", action="store_true",
                    help="300 images of 1292x968 with 500 ellipses each")
    sp.add_argument("--width", type=int, default=None, help=f"image width (config: {d.width})")
    sp.add_argument("--height", type=int, default=None, help=f"image height (config: {d.height})")
    sp.add_argument("--count", type=int, default=None, help=f"ellipses per image (config: {d.count})")
    sp.add_argument("--margin", type=float, default=None,
                    help=f"min HBE gap margin in px (config: {d.margin})")
    sp.add_argument("--noise-std", type=float, default=None,
                    help=f"background noise sigma (config: {d.noise_std})")
    sp.add_argument("--background-level", type=float, default=None,
                    help=f"flat background gray level (config: {d.background_level})")
    sp.add_argument("--background-image", default=None, help="background PNG instead of flat gray")
    sp.add_argument("--stains", type=int, default=None, help="stain disks per degraded image (config: 0)")
    sp.add_argument("--blurs", type=int, default=None, help="blur regions per degraded image (config: 0)")
    sp.add_argument("--degraded-fraction", type=float, default=None,
                    help=f"fraction of images receiving degradations (config: {d.degraded_fraction})")
    sp.add_argument("--prefix", default="syn", help="image id prefix")
    sp.add_argument("--jobs", type=int, default=_jobs_default(), help="worker processes")
    sp.set_defaults(func=cmd_synth)

    dp = sub.add_parser("detect", formatter_class=fmt,
                        help="detect, rank and filter ellipses for every manifest image")
    dp.add_argument("manifest", help="dataset manifest.json")
    dp.add_argument("--out", required=True, help="directory for per-image detection CSVs")
    dp.add_argument("--backend", choices=("moments", "oracle", "file"), default="moments",
                    help="proposal source")
    dp.add_argument("--proposals", default=None, help="proposal CSV directory (file backend)")
    dp.add_argument("--seed", type=int, default=None, help="RNG seed (required for oracle)")
    dp.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA,
                    help="symmetry weight in the combined score")
    dp.add_argument("--nms-iou", type=float, default=DEFAULT_NMS_IOU, help="NMS box IoU threshold")
    dp.add_argument("--dedup-dist", type=float, default=DEFAULT_DEDUP_DIST,
                    help="final center-distance dedup radius in px")
    dp.add_argument("--threshold", type=float, default=None,
                    help="fixed foreground threshold (Otsu if omitted)")
    dp.add_argument("--min-area", type=int, default=30, help="minimum component area in px")
    dp.add_argument("--polarity", choices=("bright", "dark"), default="bright",
                    help="foreground polarity")
    dp.add_argument("--drop-border", action="store_true",
                    help="discard components touching the image border")
    dp.add_argument("--oracle-k", type=int, default=1, help="oracle proposals per object")
    dp.add_argument("--oracle-sigma-center", type=float, default=0.0, help="oracle center jitter px")
    dp.add_argument("--oracle-sigma-scale", type=float, default=0.0, help="oracle log-axis jitter")
    dp.add_argument("--oracle-sigma-theta", type=float, default=0.0, help="oracle angle jitter rad")
    dp.add_argument("--oracle-fps", type=int, default=0, help="oracle false positives per image")
    dp.add_argument("--jobs", type=int, default=_jobs_default(), help="worker processes")
    dp.set_defaults(func=cmd_detect)

    ep = sub.add_parser("eval", formatter_class=fmt, help="evaluate detections against ground truth")
    ep.add_argument("detections", help="directory of per-image detection CSVs")
    ep.add_argument("manifest", help="dataset manifest.json")
    ep.add_argument("--out", required=True, help="directory for report.json and table.txt")
    ep.add_argument("--mode", choices=("ellipse", "box"), default="ellipse",
                    help="pixel IoU on ellipses or rectangle IoU on HBEs")
    ep.add_argument("--match-iou", type=float, default=DEFAULT_MATCH_IOU,
                    help="IoU above which a match is a true positive")
    ep.add_argument("--jobs", type=int, default=_jobs_default(), help="worker processes")
    ep.set_defaults(func=cmd_eval)

    op = sub.add_parser("overlay", formatter_class=fmt, help="draw ellipse outlines onto an image")
    op.add_argument("image", help="input PNG")
    op.add_argument("ellipses", help="annotation or detection CSV")
    op.add_argument("-o", "--out", required=True, help="output PNG")
    op.add_argument("--value", type=int, default=255, help="outline gray level")
    op.set_defaults(func=cmd_overlay)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, InvalidArgument) as exc:
        print(f"fiberdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, InsufficientData) as exc:
        print(f"fiberdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
