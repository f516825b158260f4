"""Dual-modality teacher backends.

The real backend wraps a pretrained CLIP-family checkpoint through
transformers (width 512 for clip-vit-base-patch32). The hashed backend
is a deterministic stand-in with the same interface and width, usable
offline; its embeddings are seeded random projections of token counts
and pixel statistics, so matched semantics are NOT meaningful, only the
pipeline and format are.
"""

from __future__ import annotations

import hashlib
import warnings

import numpy as np

MAX_TEXT_TOKENS = 77
CLIP_WIDTH = 512


def _keyed_rng(*key: object) -> np.random.Generator:
    digest = hashlib.blake2b(repr(key).encode(), digest_size=16).digest()
    return np.random.Generator(np.random.Philox(key=np.frombuffer(digest, dtype=np.uint64)))


def truncate_text(text: str, limit: int = MAX_TEXT_TOKENS) -> list[str]:
    tokens = text.split()
    if len(tokens) > limit:
        warnings.warn(f"text truncated from {len(tokens)} to {limit} tokens: {text[:40]!r}...")
        tokens = tokens[:limit]
    return tokens


class HashedTeacher:
    """Deterministic offline teacher with CLIP-like interface and width."""

    def __init__(self, width: int = CLIP_WIDTH, seed: int = 0):
        self.width = width
        self.seed = seed

    def embed_text(self, text: str) -> np.ndarray:
        out = np.zeros(self.width)
        for token in truncate_text(text):
            out += _keyed_rng("hashed-text", self.seed, token.lower()).standard_normal(self.width)
        norm = np.linalg.norm(out)
        return (out / norm if norm else out).astype(np.float32)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        # project a fixed-size thumbnail through a seeded random matrix
        from PIL import Image

        thumb = Image.fromarray(image).convert("L").resize((16, 16))
        flat = np.asarray(thumb, dtype=np.float64).reshape(-1) / 255.0
        proj = _keyed_rng("hashed-image", self.seed).standard_normal((self.width, flat.size))
        out = proj @ (flat - flat.mean())
        norm = np.linalg.norm(out)
        return (out / norm if norm else out).astype(np.float32)


class ClipTeacher:
    """Pretrained CLIP text/image towers (pooled projection outputs)."""

    def __init__(self, model_id: str = "openai/clip-vit-base-patch32"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip backend needs torch and transformers installed "
                "(pip install 'fixture-exporter[clip]')") from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id)
        self.model.eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.width = self.model.config.projection_dim

    def embed_text(self, text: str) -> np.ndarray:
        tokens = self.processor.tokenizer(text)["input_ids"]
        if len(tokens) > MAX_TEXT_TOKENS:
            warnings.warn(f"text truncated to {MAX_TEXT_TOKENS} tokens: {text[:40]!r}...")
        inputs = self.processor(text=[text], return_tensors="pt", padding=True,
                                truncation=True, max_length=MAX_TEXT_TOKENS)
        with self._torch.no_grad():
            out = self.model.get_text_features(**inputs)
        return out[0].numpy().astype(np.float32)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        inputs = self.processor(images=[image], return_tensors="pt")
        with self._torch.no_grad():
            out = self.model.get_image_features(**inputs)
        return out[0].numpy().astype(np.float32)


def build_teacher(spec: str, seed: int = 0):
    if spec == "hashed":
        return HashedTeacher(seed=seed)
    return ClipTeacher(model_id=spec)
