"""Interchangeable cross-modal aggregation heads.

All variants map (text sequence, image sequence) in teacher width d_C to
one fixed-width vector, so the classifier never cares which head is
configured: a 3-layer cross-attention transformer stack, plain pooled
concatenation, bilinear co-attention, and a sentiment-weighted
knowledge stack that additionally attends over auxiliary text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, counter_rng, parameter
from .errors import ConfigError, ParameterError, ShapeError

VARIANTS = ("concat", "co_attention", "cross_attention", "knowledge_cross_attention")


@dataclass
class FusionConfig:
    variant: str = "cross_attention"
    layers: int = 3
    width: int = 32               # d_C
    co_k: int | None = None      # co-attention joint width; defaults to width

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown fusion variant {self.variant!r}; choose from {VARIANTS}")
        if self.layers < 1:
            raise ParameterError(f"fusion needs at least one layer, got {self.layers}")
        if self.co_k is None:
            self.co_k = self.width

    @property
    def output_width(self) -> int:
        if self.variant == "concat":
            return 2 * self.width
        if self.variant == "co_attention":
            return 2 * self.co_k
        return self.width


class SentimentLexicon:
    """token -> sentiment score in [-1, 1]; unknown tokens score 0."""

    def __init__(self, values: dict | None = None):
        self.values = {}
        for token, v in (values or {}).items():
            v = float(v)
            if not -1.0 <= v <= 1.0:
                raise ParameterError(f"sentiment for {token!r} outside [-1, 1]: {v}")
            self.values[str(token)] = v

    @classmethod
    def load(cls, path) -> "SentimentLexicon":
        """Plain text, one `token<TAB>value` per line."""
        values = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip():
                    continue
                try:
                    token, value = line.split("\t")
                    values[token] = float(value)
                except ValueError as exc:
                    raise ConfigError(f"lexicon line {lineno}: {raw!r}") from exc
        return cls(values)

    def value(self, token) -> float:
        return self.values.get(str(token), 0.0)

    def sc_matrix(self, q_tokens, kv_tokens) -> np.ndarray:
        """Pairwise sentiment discrepancy |S_x - S_y| * exp(-S_x S_y)."""
        sq = np.array([self.value(t) for t in q_tokens])
        sk = np.array([self.value(t) for t in kv_tokens])
        return sc_weight(sq[:, None], sk[None, :])


def sc_weight(s_x, s_y):
    """Discrepancy weight for a sentiment pair: large when signs oppose."""
    return np.abs(s_x - s_y) * np.exp(-s_x * s_y)


def _pool(features: Tensor, mask=None) -> Tensor:
    k = features.shape[0]
    if mask is None:
        w = np.full((1, k), 1.0 / k)
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.size != k:
            raise ShapeError(f"mask of length {m.size} for {k} positions")
        total = m.sum()
        if total == 0:
            raise ShapeError("cannot pool fully masked features")
        w = (m / total)[None, :]
    return ad.flatten(ad.matmul(Tensor(w), features))


class CrossAttentionBlock:
    """One transformer layer whose queries and keys/values may differ.

    Pre-norm: attention with residual, then tanh FFN with residual. In
    ``attention_only`` mode the block computes the bare scaled
    dot-product softmax((Q K^T)/sqrt(d_k)) V from raw inputs, which is
    what the brute-force test oracle reproduces.
    """

    def __init__(self, width: int, rng: np.random.Generator, name: str, self_attention: bool = False):
        self.width = width
        self.name = name
        self.self_attention = self_attention
        self.ln_q_g = parameter(width, rng, "ones")
        self.ln_q_b = parameter(width, rng, "zeros")
        self.ln_kv_g = parameter(width, rng, "ones")
        self.ln_kv_b = parameter(width, rng, "zeros")
        self.wq = parameter((width, width), rng)
        self.wk = parameter((width, width), rng)
        self.wv = parameter((width, width), rng)
        self.wo = parameter((width, width), rng)
        self.ln2_g = parameter(width, rng, "ones")
        self.ln2_b = parameter(width, rng, "zeros")
        self.w1 = parameter((width, 2 * width), rng)
        self.b1 = parameter(2 * width, rng, "zeros")
        self.w2 = parameter((2 * width, width), rng)
        self.b2 = parameter(width, rng, "zeros")
        self.last_weights: np.ndarray | None = None

    def parameters(self):
        names = ("ln_q_g", "ln_q_b", "ln_kv_g", "ln_kv_b", "wq", "wk", "wv", "wo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")
        return [(f"{self.name}.{n}", getattr(self, n)) for n in names]

    def _attend(self, q_in: Tensor, kv_in: Tensor, key_mask, sc) -> Tensor:
        q = ad.matmul(q_in, self.wq)
        k = ad.matmul(kv_in, self.wk)
        v = ad.matmul(kv_in, self.wv)
        logits = ad.matmul(q, ad.transpose(k))
        if sc is not None:
            if sc.shape != logits.shape:
                raise ShapeError(f"sentiment matrix {sc.shape} vs attention logits {logits.shape}")
            logits = ad.mul(logits, Tensor(1.0 + sc))
        logits = ad.scale(logits, 1.0 / np.sqrt(self.width))
        if key_mask is not None:
            m = np.asarray(key_mask, dtype=np.float64)
            if m.size != k.shape[0]:
                raise ShapeError(f"key mask of length {m.size} for {k.shape[0]} keys")
            additive = np.where(m > 0, 0.0, -1e9)
            logits = ad.add(logits, Tensor(np.broadcast_to(additive, logits.shape).copy()))
        weights = ad.softmax_rows(logits)
        self.last_weights = weights.data
        return ad.matmul(weights, v)

    def __call__(self, q_src: Tensor, kv_src: Tensor, key_mask=None, sc=None,
                 attention_only: bool = False) -> Tensor:
        if q_src.shape[1] != self.width or kv_src.shape[1] != self.width:
            raise ShapeError(
                f"feature width mismatch: block is {self.width}, "
                f"got {q_src.shape} and {kv_src.shape}")
        if attention_only:
            return self._attend(q_src, kv_src, key_mask, sc)
        q_in = ad.add(ad.mul(ad.layer_norm(q_src), self.ln_q_g), self.ln_q_b)
        if self.self_attention and kv_src is q_src:
            kv_in = q_in
        else:
            kv_in = ad.add(ad.mul(ad.layer_norm(kv_src), self.ln_kv_g), self.ln_kv_b)
        x = ad.add(q_src, ad.matmul(self._attend(q_in, kv_in, key_mask, sc), self.wo))
        h2 = ad.add(ad.mul(ad.layer_norm(x), self.ln2_g), self.ln2_b)
        ffn = ad.matmul(ad.tanh(ad.add(ad.matmul(h2, self.w1), self.b1)), self.w2)
        return ad.add(x, ad.add(ffn, self.b2))

    def sentiment(self, q_src, kv_src, q_tokens, kv_tokens, lexicon: SentimentLexicon,
                  key_mask=None, attention_only: bool = False) -> Tensor:
        """Attention with logits reweighted by (1 + SC) of the position tokens."""
        if len(q_tokens) != q_src.shape[0] or len(kv_tokens) != kv_src.shape[0]:
            raise ShapeError(
                f"token lists ({len(q_tokens)}, {len(kv_tokens)}) do not match "
                f"positions ({q_src.shape[0]}, {kv_src.shape[0]})")
        sc = lexicon.sc_matrix(q_tokens, kv_tokens) if lexicon is not None else None
        return self(q_src, kv_src, key_mask=key_mask, sc=sc, attention_only=attention_only)


class CrossAttentionFusion:
    """Stack of cross-attention layers; text queries the image sequence.

    Layer 1 queries with the text features, later layers query with the
    previous hidden state; the final state is mask-aware mean-pooled.
    """

    def __init__(self, config: FusionConfig, seed: int = 0, name: str = "fusion"):
        rng = counter_rng("init", seed, name)
        self.config = config
        self.blocks = [CrossAttentionBlock(config.width, rng, f"{name}.block{i}")
                       for i in range(config.layers)]
        self.output_width = config.output_width

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def __call__(self, text_feats: Tensor, image_feats: Tensor,
                 text_mask=None, image_mask=None, **_) -> Tensor:
        h = text_feats
        for block in self.blocks:
            h = block(h, image_feats, key_mask=image_mask)
        return _pool(h, text_mask)


class ConcatFusion:
    """Mean-pool each modality and concatenate, text first."""

    def __init__(self, config: FusionConfig, seed: int = 0, name: str = "fusion"):
        self.config = config
        self.output_width = config.output_width

    def parameters(self):
        return []

    def __call__(self, text_feats: Tensor, image_feats: Tensor,
                 text_mask=None, image_mask=None, **_) -> Tensor:
        return ad.concat([_pool(text_feats, text_mask), _pool(image_feats, image_mask)])


class CoAttentionFusion:
    """Bilinear affinity co-attention over column-per-position features.

    With T = d_C x n text and I = d_C x m image columns:
        C   = tanh(T' Wc I)              (n x m affinity)
        h_i = tanh(Wi I + (Wt T) C)      (k x m)
        h_t = tanh(Wt T + (Wi I) C')     (k x n)
    then each side is mean-pooled over positions and concatenated.
    """

    def __init__(self, config: FusionConfig, seed: int = 0, name: str = "fusion"):
        rng = counter_rng("init", seed, name)
        self.config = config
        k = config.co_k
        self.w_c = parameter((config.width, config.width), rng)
        self.w_t = parameter((k, config.width), rng)
        self.w_i = parameter((k, config.width), rng)
        self.name = name
        self.output_width = config.output_width

    def parameters(self):
        return [(f"{self.name}.{n}", getattr(self, n)) for n in ("w_c", "w_t", "w_i")]

    def fuse_columns(self, text_cols: Tensor, image_cols: Tensor,
                     text_mask=None, image_mask=None) -> Tensor:
        if text_cols.shape[0] != self.config.width or image_cols.shape[0] != self.config.width:
            raise ShapeError(
                f"expected d_C x positions inputs with d_C={self.config.width}, "
                f"got {text_cols.shape} and {image_cols.shape}")
        affinity = ad.tanh(ad.matmul(ad.matmul(ad.transpose(text_cols), self.w_c), image_cols))
        wt_t = ad.matmul(self.w_t, text_cols)
        wi_i = ad.matmul(self.w_i, image_cols)
        h_image = ad.tanh(ad.add(wi_i, ad.matmul(wt_t, affinity)))
        h_text = ad.tanh(ad.add(wt_t, ad.matmul(wi_i, ad.transpose(affinity))))
        pooled_t = self._pool_columns(h_text, text_mask)
        pooled_i = self._pool_columns(h_image, image_mask)
        return ad.concat([pooled_t, pooled_i])

    @staticmethod
    def _pool_columns(h: Tensor, mask) -> Tensor:
        if mask is None:
            return ad.mean(h, axis=1)
        m = np.asarray(mask, dtype=np.float64)
        if m.sum() == 0:
            raise ShapeError("cannot pool fully masked features")
        w = (m / m.sum())[:, None]
        return ad.flatten(ad.matmul(h, Tensor(w)))

    def __call__(self, text_feats: Tensor, image_feats: Tensor,
                 text_mask=None, image_mask=None, **_) -> Tensor:
        return self.fuse_columns(ad.transpose(text_feats), ad.transpose(image_feats),
                                 text_mask, image_mask)


class KnowledgeFusion:
    """Three fixed layers: sentiment text self-attention, plain cross-attention
    to the image, sentiment cross-attention to auxiliary text, then pool.

    The image layer stays unweighted: sentiment values exist only for
    tokens.
    """

    def __init__(self, config: FusionConfig, seed: int = 0, name: str = "fusion"):
        rng = counter_rng("init", seed, name)
        self.config = config
        self.text_self = CrossAttentionBlock(config.width, rng, f"{name}.text_self",
                                             self_attention=True)
        self.image_cross = CrossAttentionBlock(config.width, rng, f"{name}.image_cross")
        self.aux_cross = CrossAttentionBlock(config.width, rng, f"{name}.aux_cross")
        self.output_width = config.output_width

    def parameters(self):
        return (self.text_self.parameters() + self.image_cross.parameters()
                + self.aux_cross.parameters())

    def __call__(self, text_feats: Tensor, image_feats: Tensor, aux_feats: Tensor = None,
                 text_tokens=None, aux_tokens=None, lexicon: SentimentLexicon | None = None,
                 text_mask=None, image_mask=None, aux_mask=None) -> Tensor:
        if aux_feats is None or aux_tokens is None:
            raise ConfigError("knowledge fusion requires auxiliary text features and tokens")
        if text_tokens is None:
            raise ConfigError("knowledge fusion requires the text tokens for sentiment lookup")
        h1 = self.text_self.sentiment(text_feats, text_feats, text_tokens, text_tokens,
                                      lexicon, key_mask=text_mask)
        h2 = self.image_cross(h1, image_feats, key_mask=image_mask)
        h3 = self.aux_cross.sentiment(h2, aux_feats, text_tokens, aux_tokens,
                                      lexicon, key_mask=aux_mask)
        return _pool(h3, text_mask)


_FUSION_CLASSES = {
    "concat": ConcatFusion,
    "co_attention": CoAttentionFusion,
    "cross_attention": CrossAttentionFusion,
    "knowledge_cross_attention": KnowledgeFusion,
}


def build_fusion(config: FusionConfig, seed: int = 0):
    return _FUSION_CLASSES[config.variant](config, seed=seed)
