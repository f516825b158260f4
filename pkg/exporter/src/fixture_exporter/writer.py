"""Standalone writer for the alignment fixture format.

Deliberately independent of the core package: this module re-implements
the byte layout from the format contract so exported files prove
cross-implementation conformance.

Little-endian: magic "CLFA", version u8 = 1, N u32, d_C u32, flags u8,
then N records of [u64 id][d_C f32 text embedding][d_C f32 image
embedding]. The exporter emits pooled vectors only, so the raw-inputs
flag stays clear.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CLFA"
VERSION = 1


class ExportFormatError(ValueError):
    pass


def write_fixture_file(path, records: list[tuple[int, np.ndarray, np.ndarray]]) -> None:
    """records: (sample id, text embedding, image embedding) triples."""
    widths = {len(t) for _, t, _ in records} | {len(i) for _, _, i in records}
    if len(widths) != 1:
        raise ExportFormatError(f"embedding widths differ: {sorted(widths)}")
    width = widths.pop()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BIIB", VERSION, len(records), width, 0))
        for sample_id, text_emb, image_emb in records:
            text_emb = np.asarray(text_emb, dtype="<f4")
            image_emb = np.asarray(image_emb, dtype="<f4")
            if not (np.isfinite(text_emb).all() and np.isfinite(image_emb).all()):
                raise ExportFormatError(f"non-finite embedding for sample {sample_id}")
            fh.write(struct.pack("<Q", int(sample_id)))
            fh.write(text_emb.tobytes())
            fh.write(image_emb.tobytes())


def write_sidecar_manifest(path, labels: dict[int, int], classes: int) -> None:
    """Counts-plus-labels manifest in the core's `key = value` grammar."""
    counts = {c: 0 for c in range(classes)}
    for label in labels.values():
        counts[label] = counts.get(label, 0) + 1
    lines = ["# dataset manifest", "version = 1", f"classes = {classes}",
             f"split.train.total = {len(labels)}"]
    lines += [f"split.train.class.{c} = {n}" for c, n in sorted(counts.items())]
    lines += [f"label.{sid} = {labels[sid]}" for sid in sorted(labels)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
