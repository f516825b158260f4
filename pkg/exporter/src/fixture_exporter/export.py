"""Batch export: manifest CSV in, fixture file + sidecar manifest out.

Input manifest columns: id,text,image_path,label. Output embeddings are
the teacher's pooled text/image vectors as float32; identical manifests
produce bit-identical files.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from .teachers import build_teacher
from .writer import write_fixture_file, write_sidecar_manifest

REQUIRED_COLUMNS = ("id", "text", "image_path", "label")


class ManifestError(ValueError):
    pass


def read_manifest_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(REQUIRED_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ManifestError(f"manifest is missing columns: {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ManifestError("manifest has no data rows")
    seen_texts: dict[str, int] = {}
    for row in rows:
        row["id"] = int(row["id"])
        row["label"] = int(row["label"])
        text = row["text"]
        if text in seen_texts:
            warnings.warn(
                f"duplicate text for ids {seen_texts[text]} and {row['id']}: {text[:40]!r} "
                "(downstream batching should drop in-batch duplicates)")
        else:
            seen_texts[text] = row["id"]
    return rows


def load_image(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise ManifestError(f"unreadable image {path}: {exc}") from exc


def export(manifest_path, out_path, teacher_spec: str = "hashed", seed: int = 0,
           expected_width: int | None = None) -> int:
    rows = read_manifest_csv(manifest_path)
    teacher = build_teacher(teacher_spec, seed=seed)
    if expected_width is not None and teacher.width != expected_width:
        raise ManifestError(
            f"teacher width {teacher.width} does not match declared width {expected_width}")
    records = []
    labels = {}
    base = Path(manifest_path).parent
    for row in rows:
        image_path = Path(row["image_path"])
        if not image_path.is_absolute():
            image_path = base / image_path
        image = load_image(image_path)
        records.append((row["id"], teacher.embed_text(row["text"]),
                        teacher.embed_image(image)))
        labels[row["id"]] = row["label"]
    write_fixture_file(out_path, records)
    classes = max(labels.values()) + 1 if labels else 2
    write_sidecar_manifest(Path(out_path).with_name("manifest.txt"), labels,
                           classes=max(classes, 2))
    return len(records)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="export-fixtures")
    parser.add_argument("--manifest", required=True, help="CSV with id,text,image_path,label")
    parser.add_argument("--out", required=True, help="fixture file to write")
    parser.add_argument("--teacher", default="hashed",
                        help="'hashed' or a CLIP model id (default: hashed)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--width", type=int, default=None,
                        help="fail unless the teacher emits this width")
    args = parser.parse_args(argv)
    try:
        count = export(args.manifest, args.out, teacher_spec=args.teacher, seed=args.seed,
                       expected_width=args.width)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({count} records)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
