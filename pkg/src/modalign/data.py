"""Synthetic cross-modal dataset, binary fixture format, manifests, batching.

The synthetic task is built so the label is a pure cross-modal function:
neither modality alone carries it. Text and image render separate latent
vectors that share a semantic core, and the 2-class label fires exactly
when the two private sign coordinates disagree.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import counter_rng
from .encoders import LATENT_DIM, SHARED_SLICE, SIGN_INDEX
from .errors import (
    ConfigError,
    FixtureError,
    FixtureMagicError,
    FixtureTruncatedError,
    FixtureValueError,
    FixtureVersionError,
    ParameterError,
)

VOCAB_SIZE = 64
SEQ_LEN = 12
IMAGE_SIZE = 16
TOKEN_BINS = 8  # per-coordinate quantization: 8 latent dims x 8 bins = vocab 64

FIXTURE_MAGIC = b"CLFA"
FIXTURE_VERSION = 1
FLAG_RAW_INPUTS = 0x01


@dataclass
class Sample:
    id: int
    tokens: list[int]
    image: np.ndarray
    label: int
    mask: list[int] = field(default_factory=list)
    aux_tokens: list[int] | None = None
    z_text: np.ndarray | None = None   # generator latents; hidden from the model
    z_image: np.ndarray | None = None

    def __post_init__(self):
        if not self.mask:
            self.mask = [1] * len(self.tokens)


@dataclass
class Dataset:
    samples: list[Sample]
    num_classes: int
    vocab_size: int = VOCAB_SIZE
    split: str = "train"

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def _quantize(z: np.ndarray) -> np.ndarray:
    """Bin index per latent coordinate over [-2, 2]."""
    return np.clip(((z + 2.0) / 4.0 * TOKEN_BINS).astype(int), 0, TOKEN_BINS - 1)


def _bin_centers(bins: np.ndarray) -> np.ndarray:
    return -2.0 + (bins + 0.5) * (4.0 / TOKEN_BINS)


def _quantize_tokens(z: np.ndarray) -> list[int]:
    """Map each latent coordinate to one of TOKEN_BINS ids (coord-major)."""
    return [int(j * TOKEN_BINS + b) for j, b in enumerate(_quantize(z))]


RENDER_PATCH = 8  # each 8x8 patch renders two latent coordinates


def _render_templates() -> np.ndarray:
    """One unit-Frobenius template per latent coordinate, local to a patch.

    Fixed across datasets (like the token binning): the rendering is the
    image modality's vocabulary, not part of a dataset's randomness.
    """
    rng = counter_rng("data-render", "v1")
    templates = rng.standard_normal((LATENT_DIM, RENDER_PATCH, RENDER_PATCH))
    norms = np.linalg.norm(templates.reshape(LATENT_DIM, -1), axis=1)
    return templates / norms[:, None, None]


def _render_image(z: np.ndarray, templates: np.ndarray, rng) -> np.ndarray:
    """Patch-grid rendering: patch k paints coordinates 2k and 2k+1.

    Intensities come from the quantized coordinates (the same bins the
    tokens use), so patches live in a finite prototype set plus small
    noise; the label-relevant signs survive quantization exactly.
    """
    zq = _bin_centers(_quantize(z))
    grid = IMAGE_SIZE // RENDER_PATCH
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE))
    for k in range(grid * grid):
        r, c = divmod(k, grid)
        block = 3.0 * (zq[2 * k] * templates[2 * k] + zq[2 * k + 1] * templates[2 * k + 1])
        img[r * RENDER_PATCH:(r + 1) * RENDER_PATCH,
            c * RENDER_PATCH:(c + 1) * RENDER_PATCH] = block
    img += 0.01 * rng.standard_normal(img.shape)
    return img[:, :, None]


def generate_synthetic(n_samples: int, seed: int, num_classes: int = 2,
                       split: str = "train") -> Dataset:
    """Deterministic paired-sample generator.

    2-class mode: label 1 iff the private sign coordinates of the two
    latents disagree. 3-class mode adds a same-sign split (0 = disagree,
    1 = both negative, 2 = both positive), still cross-modal only.
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if num_classes not in (2, 3):
        raise ParameterError(f"num_classes must be 2 or 3, got {num_classes}")
    templates = _render_templates()
    samples = []
    n_shared = SHARED_SLICE.stop - SHARED_SLICE.start
    n_private = LATENT_DIM - 1 - n_shared
    for i in range(n_samples):
        rng = counter_rng("data", seed, i)
        core = rng.standard_normal(n_shared)
        z_t = np.concatenate([rng.standard_normal(1), core, rng.standard_normal(n_private)])
        z_i = np.concatenate([rng.standard_normal(1), core, rng.standard_normal(n_private)])
        s_t, s_i = z_t[SIGN_INDEX] >= 0, z_i[SIGN_INDEX] >= 0
        if num_classes == 2:
            label = int(s_t != s_i)
        else:
            label = 0 if s_t != s_i else (2 if s_t else 1)
        tokens = _quantize_tokens(z_t)
        # pad to SEQ_LEN by repeating informative tokens (keeps the pooled
        # representation clean; repeats vary per sample)
        tokens += [tokens[j] for j in rng.integers(0, len(tokens), size=SEQ_LEN - len(tokens))]
        aux = _quantize_tokens(z_i)
        image = _render_image(z_i, templates, rng)
        samples.append(Sample(id=i, tokens=tokens, image=image, label=label,
                              aux_tokens=aux, z_text=z_t, z_image=z_i))
    return Dataset(samples, num_classes=num_classes, split=split)


def dataset_stats(datasets) -> dict[str, dict]:
    """Per-split sample counts per class."""
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    stats: dict[str, dict] = {}
    for ds in datasets:
        counts = {c: 0 for c in range(ds.num_classes)}
        for s in ds.samples:
            counts[s.label] = counts.get(s.label, 0) + 1
        stats[ds.split] = {"total": len(ds.samples), "per_class": counts}
    return stats


# --- manifest: plain text `key = value`, '#' comments -----------------------

def write_manifest(path, stats: dict[str, dict], labels: dict[int, int] | None = None,
                   classes: int | None = None) -> None:
    lines = ["# dataset manifest", "version = 1"]
    if classes is not None:
        lines.append(f"classes = {classes}")
    for split in sorted(stats):
        lines.append(f"split.{split}.total = {stats[split]['total']}")
        for cls in sorted(stats[split]["per_class"]):
            lines.append(f"split.{split}.class.{cls} = {stats[split]['per_class'][cls]}")
    if labels:
        for sid in sorted(labels):
            lines.append(f"label.{sid} = {labels[sid]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_kv_lines(text: str) -> dict[str, str]:
    """Shared `key = value` grammar (UTF-8, '#' comments, blank lines ok)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def read_manifest(path) -> tuple[dict[str, dict], dict[int, int]]:
    with open(path, encoding="utf-8") as fh:
        kv = parse_kv_lines(fh.read())
    stats: dict[str, dict] = {}
    labels: dict[int, int] = {}
    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] == "split":
            split = parts[1]
            stats.setdefault(split, {"total": 0, "per_class": {}})
            if parts[2] == "total":
                stats[split]["total"] = int(value)
            elif parts[2] == "class":
                stats[split]["per_class"][int(parts[3])] = int(value)
        elif parts[0] == "label":
            labels[int(parts[1])] = int(value)
    return stats, labels


# --- fixture binary format ---------------------------------------------------
#
# Little-endian: magic "CLFA", version u8, N u32, d_C u32, flags u8, then N
# records of [u64 id][d_C f32 text][d_C f32 image] and, when flags bit0 is
# set, [u32 n_tokens][n_tokens u32][u32 H][u32 W][u32 c][H*W*c f32 pixels].
# Floats are f32 on disk, widened to f64 in memory.

@dataclass
class FixtureRecord:
    id: int
    text_embedding: np.ndarray
    image_embedding: np.ndarray
    tokens: list[int] | None = None
    image: np.ndarray | None = None


@dataclass
class FixtureFile:
    width: int
    flags: int
    records: list[FixtureRecord]

    @property
    def has_raw_inputs(self) -> bool:
        return bool(self.flags & FLAG_RAW_INPUTS)


def write_fixture(path, samples, embeddings, include_raw: bool = False) -> None:
    """Write samples + teacher embeddings in the fixture format.

    ``embeddings`` is a (text, image) pair of 1-D arrays per sample; all
    widths must agree and every float must be finite.
    """
    if len(samples) != len(embeddings):
        raise FixtureError(f"{len(samples)} samples but {len(embeddings)} embedding pairs")
    widths = {len(t) for t, _ in embeddings} | {len(i) for _, i in embeddings}
    if len(widths) != 1:
        raise FixtureError(f"embedding widths differ: {sorted(widths)}")
    width = widths.pop()
    flags = FLAG_RAW_INPUTS if include_raw else 0
    with open(path, "wb") as fh:
        fh.write(FIXTURE_MAGIC)
        fh.write(struct.pack("<BIIB", FIXTURE_VERSION, len(samples), width, flags))
        for sample, (emb_t, emb_i) in zip(samples, embeddings):
            emb_t = np.asarray(emb_t, dtype=np.float32)
            emb_i = np.asarray(emb_i, dtype=np.float32)
            if not (np.isfinite(emb_t).all() and np.isfinite(emb_i).all()):
                raise FixtureValueError(f"non-finite embedding for sample {sample.id}")
            fh.write(struct.pack("<Q", sample.id))
            fh.write(emb_t.tobytes())
            fh.write(emb_i.tobytes())
            if include_raw:
                tokens = np.asarray(sample.tokens, dtype=np.uint32)
                img = np.asarray(sample.image, dtype=np.float32)
                if img.ndim == 2:
                    img = img[:, :, None]
                fh.write(struct.pack("<I", tokens.size))
                fh.write(tokens.tobytes())
                fh.write(struct.pack("<III", *img.shape))
                fh.write(img.tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FixtureTruncatedError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.blob)}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_fixture(path) -> FixtureFile:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    magic = rd.take(4)
    if magic != FIXTURE_MAGIC:
        raise FixtureMagicError(f"bad magic {magic!r}, expected {FIXTURE_MAGIC!r}")
    version, count, width, flags = rd.unpack("<BIIB")
    if version != FIXTURE_VERSION:
        raise FixtureVersionError(f"unsupported fixture version {version}")
    records = []
    for _ in range(count):
        (sample_id,) = rd.unpack("<Q")
        emb_t = np.frombuffer(rd.take(4 * width), dtype="<f4").astype(np.float64)
        emb_i = np.frombuffer(rd.take(4 * width), dtype="<f4").astype(np.float64)
        if not (np.isfinite(emb_t).all() and np.isfinite(emb_i).all()):
            raise FixtureValueError(f"non-finite embedding for sample {sample_id}")
        tokens = image = None
        if flags & FLAG_RAW_INPUTS:
            (n_tokens,) = rd.unpack("<I")
            tokens = np.frombuffer(rd.take(4 * n_tokens), dtype="<u4").tolist()
            h, w, c = rd.unpack("<III")
            pixels = np.frombuffer(rd.take(4 * h * w * c), dtype="<f4").astype(np.float64)
            if not np.isfinite(pixels).all():
                raise FixtureValueError(f"non-finite pixels for sample {sample_id}")
            image = pixels.reshape(h, w, c)
        records.append(FixtureRecord(sample_id, emb_t, emb_i, tokens, image))
    if rd.pos != len(rd.blob):
        raise FixtureError(f"{len(rd.blob) - rd.pos} trailing bytes after declared payload")
    return FixtureFile(width=width, flags=flags, records=records)


def dataset_from_fixture(fixture: FixtureFile, labels: dict[int, int],
                         num_classes: int, split: str = "train") -> Dataset:
    """Rebuild a trainable dataset from a fixture carrying raw inputs."""
    if not fixture.has_raw_inputs:
        raise ConfigError("fixture has no raw student inputs; cannot train from it")
    samples = []
    vocab = VOCAB_SIZE
    for rec in fixture.records:
        if rec.id not in labels:
            raise ConfigError(f"manifest is missing a label for sample {rec.id}")
        samples.append(Sample(id=rec.id, tokens=list(rec.tokens), image=rec.image,
                              label=labels[rec.id]))
        vocab = max(vocab, max(rec.tokens, default=0) + 1)
    return Dataset(samples, num_classes=num_classes, vocab_size=vocab, split=split)


def batch_iter(dataset: Dataset, batch_size: int, seed: int, epoch: int = 0,
               drop_duplicates: bool = True) -> list[list[Sample]]:
    """Seeded epoch shuffle partitioned into batches.

    With drop_duplicates, samples sharing a teacher id never share a
    batch (deferred to a later one), protecting the diagonal-positive
    assumption of the in-batch contrastive loss.
    """
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    order = counter_rng("batch", seed, epoch).permutation(len(dataset.samples))
    remaining = [dataset.samples[i] for i in order]
    if not drop_duplicates:
        return [remaining[i:i + batch_size] for i in range(0, len(remaining), batch_size)]
    batches = []
    while remaining:
        batch, ids, rest = [], set(), []
        for s in remaining:
            if len(batch) < batch_size and s.id not in ids:
                batch.append(s)
                ids.add(s.id)
            else:
                rest.append(s)
        batches.append(batch)
        remaining = rest
    return batches
