"""Dataset manifests: CSV rows of image path, annotation path, and lab Hb."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging
from .balance import LabeledSample, _check_hb
from .errors import AnnotationError, ImagingError

MANIFEST_HEADER = ["image_path", "annotation_path", "hb_gdl"]


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    annotation_path: str
    hb_gdl: float


def load_image(path: str | Path) -> imaging.ImageBuffer:
    """Decode PNG/JPEG at the edge; imaging itself only sees RGB buffers."""
    from PIL import Image

    with Image.open(path) as img:
        return imaging.ImageBuffer(np.asarray(img.convert("RGB"), dtype=np.uint8))


def parse_manifest(text: str) -> list[ManifestRow]:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise ValueError(f"manifest must start with header {','.join(MANIFEST_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ValueError(f"manifest line {lineno}: expected 3 columns, got {len(row)}")
        try:
            hb = float(row[2])
        except ValueError:
            raise ValueError(f"manifest line {lineno}: hb_gdl {row[2]!r} is not a number")
        out.append(ManifestRow(row[0].strip(), row[1].strip(), hb))
    return out


def load_manifest(path: str | Path) -> list[ManifestRow]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(path: str | Path, rows: list[ManifestRow]):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for row in rows:
            writer.writerow([row.image_path, row.annotation_path, repr(row.hb_gdl)])


def validate_rows(rows: list[ManifestRow], base: Path) -> list[dict]:
    """Per-row data issues: unreadable images, bad annotations, out-of-range Hb."""
    issues = []
    for i, row in enumerate(rows):
        problems = []
        try:
            _check_hb(row.hb_gdl)
        except ValueError as exc:
            problems.append(str(exc))
        image_path = base / row.image_path
        if not image_path.exists():
            problems.append(f"missing image {row.image_path}")
        else:
            try:
                load_image(image_path)
            except Exception as exc:
                problems.append(f"image decode failed: {exc}")
        ann_path = base / row.annotation_path
        if not ann_path.exists():
            problems.append(f"missing annotations {row.annotation_path}")
        else:
            try:
                boxes = imaging.parse_annotations(ann_path.read_text(encoding="utf-8"))
                if not any(b.region_class is imaging.RegionClass.NAIL for b in boxes):
                    problems.append("no nail region annotated")
            except AnnotationError as exc:
                problems.append(f"annotations: {exc}")
        for problem in problems:
            issues.append({"row": i, "image_path": row.image_path, "problem": problem})
    return issues


def row_to_sample(row: ManifestRow, base: Path) -> LabeledSample:
    """Run the imaging pipeline for one manifest row."""
    image = load_image(base / row.image_path)
    boxes = imaging.parse_annotations((base / row.annotation_path).read_text(encoding="utf-8"))
    try:
        features = imaging.features_from_annotations(image, boxes)
    except ImagingError as exc:
        raise ImagingError(f"{row.image_path}: {exc}")
    return LabeledSample(features, row.hb_gdl)


def load_samples(manifest_path: str | Path) -> list[LabeledSample]:
    path = Path(manifest_path)
    rows = load_manifest(path)
    return [row_to_sample(row, path.parent) for row in rows]
