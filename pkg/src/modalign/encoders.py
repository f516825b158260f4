"""Student encoders for text and images, and the frozen alignment teachers.

The students are small pre-norm transformers (shared width d); the
teachers emit fixed embeddings that define the target space, either from
a synthetic shared-latent construction or from a fixture file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, counter_rng, parameter
from .errors import ShapeError, VocabularyError

MASK_NEG = -1e9  # additive attention mask; exp() underflows to exactly 0.0

# Synthetic latent layout shared between the data generator and the
# synthetic teacher: index 0 carries the label sign and is private per
# modality, indices 1..6 are the semantic core common to both modalities,
# the last is modality-private.
LATENT_DIM = 8
SIGN_INDEX = 0
SHARED_SLICE = slice(1, 7)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Split an H x W (x c) image into non-overlapping flattened patches.

    Patches are ordered row-major over the patch grid and each patch is
    flattened row-major, giving an m x (patch*patch*c) array.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"expected H x W x c image, got shape {img.shape}")
    h, w, c = img.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible by patch size {patch}")
    grid = img.reshape(h // patch, patch, w // patch, patch, c)
    return grid.transpose(0, 2, 1, 3, 4).reshape((h // patch) * (w // patch), patch * patch * c)


class TransformerBlock:
    """Pre-norm self-attention block: LN -> attention -> LN -> tanh FFN."""

    def __init__(self, d: int, rng: np.random.Generator, name: str):
        self.d = d
        self.name = name
        self.ln1_g = parameter(d, rng, "ones")
        self.ln1_b = parameter(d, rng, "zeros")
        self.wq = parameter((d, d), rng)
        self.wk = parameter((d, d), rng)
        self.wv = parameter((d, d), rng)
        self.wo = parameter((d, d), rng)
        self.ln2_g = parameter(d, rng, "ones")
        self.ln2_b = parameter(d, rng, "zeros")
        self.w1 = parameter((d, 2 * d), rng)
        self.b1 = parameter(2 * d, rng, "zeros")
        self.w2 = parameter((2 * d, d), rng)
        self.b2 = parameter(d, rng, "zeros")

    def parameters(self):
        names = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")
        return [(f"{self.name}.{n}", getattr(self, n)) for n in names]

    def __call__(self, x: Tensor, attn_mask: Tensor | None = None) -> Tensor:
        h = ad.add(ad.mul(ad.layer_norm(x), self.ln1_g), self.ln1_b)
        q = ad.matmul(h, self.wq)
        k = ad.matmul(h, self.wk)
        v = ad.matmul(h, self.wv)
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(self.d))
        if attn_mask is not None:
            logits = ad.add(logits, attn_mask)
        ctx = ad.matmul(ad.softmax_rows(logits), v)
        x = ad.add(x, ad.matmul(ctx, self.wo))
        h2 = ad.add(ad.mul(ad.layer_norm(x), self.ln2_g), self.ln2_b)
        ffn = ad.matmul(ad.tanh(ad.add(ad.matmul(h2, self.w1), self.b1)), self.w2)
        return ad.add(x, ad.add(ffn, self.b2))


def key_padding_mask(mask) -> Tensor | None:
    """n x n additive mask excluding padded key columns from attention."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    cols = np.where(m > 0, 0.0, MASK_NEG)
    return Tensor(np.broadcast_to(cols, (m.size, m.size)).copy())


class TextEncoder:
    """Token-id transformer producing one contextual vector per position."""

    def __init__(self, vocab_size: int, d: int = 64, n_blocks: int = 2,
                 n_max: int = 77, seed: int = 0, positional: bool = True):
        self.vocab_size = vocab_size
        self.d = d
        self.n_max = n_max
        self.positional = positional
        rng = counter_rng("init", seed, "text_encoder")
        self.embed = parameter((vocab_size, d), rng)
        self.pos = parameter((n_max, d), rng)
        self.blocks = [TransformerBlock(d, rng, f"text_enc.block{i}") for i in range(n_blocks)]
        self.ln_g = parameter(d, rng, "ones")
        self.ln_b = parameter(d, rng, "zeros")

    def parameters(self):
        out = [("text_enc.embed", self.embed), ("text_enc.pos", self.pos)]
        for b in self.blocks:
            out.extend(b.parameters())
        out += [("text_enc.ln_g", self.ln_g), ("text_enc.ln_b", self.ln_b)]
        return out

    def encode(self, tokens, mask=None) -> Tensor:
        tokens = list(tokens)
        n = len(tokens)
        if n == 0 or n > self.n_max:
            raise ShapeError(f"sequence length {n} outside [1, {self.n_max}]")
        bad = [t for t in tokens if not (0 <= t < self.vocab_size)]
        if bad:
            raise VocabularyError(f"token ids {bad} outside vocabulary of size {self.vocab_size}")
        x = ad.gather_rows(self.embed, tokens)
        if self.positional:
            x = ad.add(x, ad.gather_rows(self.pos, range(n)))
        attn_mask = key_padding_mask(mask)
        for block in self.blocks:
            x = block(x, attn_mask)
        return ad.add(ad.mul(ad.layer_norm(x), self.ln_g), self.ln_b)


class ImageEncoder:
    """Patch transformer: flatten patches, project to width d, run blocks."""

    def __init__(self, patch: int = 8, channels: int = 1, d: int = 64, n_blocks: int = 2,
                 max_patches: int = 64, seed: int = 0, positional: bool = True):
        self.patch = patch
        self.channels = channels
        self.d = d
        self.max_patches = max_patches
        self.positional = positional
        rng = counter_rng("init", seed, "image_encoder")
        self.proj_w = parameter((patch * patch * channels, d), rng)
        self.proj_b = parameter(d, rng, "zeros")
        self.pos = parameter((max_patches, d), rng)
        self.blocks = [TransformerBlock(d, rng, f"image_enc.block{i}") for i in range(n_blocks)]
        self.ln_g = parameter(d, rng, "ones")
        self.ln_b = parameter(d, rng, "zeros")

    def parameters(self):
        out = [("image_enc.proj_w", self.proj_w), ("image_enc.proj_b", self.proj_b),
               ("image_enc.pos", self.pos)]
        for b in self.blocks:
            out.extend(b.parameters())
        out += [("image_enc.ln_g", self.ln_g), ("image_enc.ln_b", self.ln_b)]
        return out

    def encode(self, image: np.ndarray) -> Tensor:
        patches = patchify(image, self.patch)
        m = patches.shape[0]
        if m > self.max_patches:
            raise ShapeError(f"{m} patches exceed positional table of {self.max_patches}")
        x = ad.add(ad.matmul(Tensor(patches), self.proj_w), self.proj_b)
        if self.positional:
            x = ad.add(x, ad.gather_rows(self.pos, range(m)))
        for block in self.blocks:
            x = block(x)
        return ad.add(ad.mul(ad.layer_norm(x), self.ln_g), self.ln_b)


@dataclass
class SyntheticTeacher:
    """Frozen linear maps from the generator latents into teacher space.

    Both modality maps share the columns acting on the label-sign and
    semantic-core latent coordinates, so matched pairs land close in
    teacher space; remaining columns are modality-private. Per-sample
    noise is keyed by (seed, sample id, modality) and therefore frozen.
    """

    seed: int
    width: int = 32
    noise_sigma: float = 0.1
    a_text: np.ndarray = field(init=False, repr=False)
    a_image: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        scale = 1.0 / np.sqrt(LATENT_DIM)
        shared = counter_rng("teacher", self.seed, "shared").standard_normal(
            (self.width, 1 + (SHARED_SLICE.stop - SHARED_SLICE.start))) * scale
        n_private = LATENT_DIM - shared.shape[1]
        # private columns carry half weight: teacher space is dominated by
        # the cross-modal semantics, as a pretrained joint encoder's would be
        p_t = counter_rng("teacher", self.seed, "text-private").standard_normal(
            (self.width, n_private)) * (0.5 * scale)
        p_i = counter_rng("teacher", self.seed, "image-private").standard_normal(
            (self.width, n_private)) * (0.5 * scale)
        # column order matches the latent layout: [sign, core..., private...]
        self.a_text = np.concatenate([shared, p_t], axis=1)
        self.a_image = np.concatenate([shared, p_i], axis=1)

    def parameters(self):
        return []

    def embed(self, sample) -> tuple[np.ndarray, np.ndarray]:
        eps_t = counter_rng("teacher-noise", self.seed, sample.id, "text")
        eps_i = counter_rng("teacher-noise", self.seed, sample.id, "image")
        c_t = self.a_text @ sample.z_text + self.noise_sigma * eps_t.standard_normal(self.width)
        c_i = self.a_image @ sample.z_image + self.noise_sigma * eps_i.standard_normal(self.width)
        return c_t, c_i


class FixtureTeacher:
    """Teacher backed by precomputed embeddings loaded from a fixture file."""

    def __init__(self, fixture):
        self.width = fixture.width
        self._table = {rec.id: (rec.text_embedding, rec.image_embedding) for rec in fixture.records}

    def parameters(self):
        return []

    def embed(self, sample) -> tuple[np.ndarray, np.ndarray]:
        from .errors import FixtureLookupError

        sample_id = sample if isinstance(sample, int) else sample.id
        if sample_id not in self._table:
            raise FixtureLookupError(sample_id)
        return self._table[sample_id]
