"""On-disk formats: annotation/detection CSVs and the dataset manifest.

Annotation CSV::

    image,cx,cy,theta,semi_major,semi_minor,intensity

Detection / proposal CSV::

    image,cx,cy,theta,semi_major,semi_minor,score

Values are written with 6 decimals, theta in radians in [0, pi). The manifest
is ``{"images": [{"image": ..., "annotations": ..., "degraded": ...}]}`` with
paths relative to the manifest's directory.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, FiberDetError
from .geometry import Ellipse

ANNOTATION_HEADER = ["image", "cx", "cy", "theta", "semi_major", "semi_minor", "intensity"]
DETECTION_HEADER = ["image", "cx", "cy", "theta", "semi_major", "semi_minor", "score"]


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _write_rows(path: Path, header: list[str], image_id: str,
                rows: Iterable[tuple[Ellipse, float]]) -> None:
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for e, value in rows:
                w.writerow([image_id, _fmt(e.cx), _fmt(e.cy), _fmt(e.theta),
                            _fmt(e.semi_major), _fmt(e.semi_minor), _fmt(value)])
    except OSError as exc:
        raise DataError(f"{path}: cannot write ({exc})") from exc


def _read_rows(path: Path, header: list[str]) -> tuple[list[str], list[tuple[Ellipse, float]]]:
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            first = next(reader, None)
            if first is None or [c.strip() for c in first] != header:
                raise DataError(f"{path}:1: expected header {','.join(header)}")
            ids, rows = [], []
            for lineno, rec in enumerate(reader, start=2):
                if not rec or all(not c.strip() for c in rec):
                    continue
                if len(rec) != len(header):
                    raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
                try:
                    cx, cy, theta, a, b, value = (float(c) for c in rec[1:])
                    e = Ellipse.from_axes(cx, cy, theta, a, b)
                except (ValueError, FiberDetError) as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
                ids.append(rec[0].strip())
                rows.append((e, value))
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    return ids, rows


def write_annotations(path, image_id: str, objects: Iterable[tuple[Ellipse, float]]) -> None:
    _write_rows(Path(path), ANNOTATION_HEADER, image_id, objects)


def read_annotations(path) -> tuple[list[str], list[tuple[Ellipse, float]]]:
    """Return the per-row image ids and ``(ellipse, intensity)`` rows."""
    return _read_rows(Path(path), ANNOTATION_HEADER)


def write_detections(path, image_id: str, detections: Iterable[tuple[Ellipse, float]]) -> None:
    _write_rows(Path(path), DETECTION_HEADER, image_id, detections)


def read_detections(path) -> tuple[list[str], list[tuple[Ellipse, float]]]:
    """Return the per-row image ids and ``(ellipse, score)`` rows."""
    return _read_rows(Path(path), DETECTION_HEADER)


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    annotations: Path
    degraded: bool = False

    @property
    def image_id(self) -> str:
        return self.image.stem


def write_manifest(path, entries: Sequence[dict]) -> dict:
    manifest = {"images": list(entries)}
    try:
        Path(path).write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise DataError(f"{path}: cannot write ({exc})") from exc
    return manifest


def read_manifest(path) -> list[ManifestEntry]:
    """Load a manifest, resolving paths against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    root = path.parent
    try:
        return [
            ManifestEntry(root / item["image"], root / item["annotations"],
                          bool(item.get("degraded", False)))
            for item in data["images"]
        ]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed manifest ({exc!r})") from exc
