"""Full two-modality classifier: encoders -> projections -> fusion -> head."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .alignment import ProjectionHead
from .autodiff import Tensor, counter_rng, parameter
from .data import VOCAB_SIZE
from .encoders import ImageEncoder, TextEncoder
from .errors import ConfigError
from .fusion import FusionConfig, SentimentLexicon, build_fusion


@dataclass
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    d: int = 64                  # shared student width
    text_blocks: int = 2
    image_blocks: int = 2
    n_max: int = 77
    patch: int = 8
    channels: int = 1
    max_patches: int = 64
    teacher_width: int = 32      # d_C; 512 when aligning to real teacher fixtures
    proj_hidden: int = 128
    num_classes: int = 2
    dropout: float = 0.1
    positional: bool = True
    seed: int = 0
    fusion_variant: str = "cross_attention"
    fusion_layers: int = 3

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(variant=self.fusion_variant, layers=self.fusion_layers,
                            width=self.teacher_width)

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        from .data import parse_kv_lines

        kv = parse_kv_lines(text)
        kwargs = {}
        for f in fields(cls):
            if f.name not in kv:
                continue
            raw = kv.pop(f.name)
            if f.type == "bool":
                kwargs[f.name] = raw.lower() in ("true", "1", "yes")
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        if kv:
            raise ConfigError(f"unknown model config keys: {sorted(kv)}")
        return cls(**kwargs)


@dataclass
class BatchOutput:
    logits: Tensor        # B x num_classes
    text_vecs: Tensor     # B x d_C pooled student projections
    image_vecs: Tensor    # B x d_C


class Classifier:
    """Feed-forward head: affine -> tanh -> dropout -> affine to logits."""

    def __init__(self, in_width: int, num_classes: int, hidden: int, dropout: float,
                 seed: int = 0, name: str = "classifier"):
        rng = counter_rng("init", seed, name)
        self.name = name
        self.num_classes = num_classes
        self.dropout = dropout
        self.w1 = parameter((in_width, hidden), rng)
        self.b1 = parameter(hidden, rng, "zeros")
        self.w2 = parameter((hidden, num_classes), rng)
        self.b2 = parameter(num_classes, rng, "zeros")

    def parameters(self):
        return [(f"{self.name}.{n}", getattr(self, n)) for n in ("w1", "b1", "w2", "b2")]

    def __call__(self, fused: Tensor, train: bool, rng_key: tuple) -> Tensor:
        x = ad.stack_rows([fused])
        h = ad.tanh(ad.add(ad.matmul(x, self.w1), self.b1))
        h = ad.dropout(h, self.dropout, train, counter_rng("dropout", *rng_key, self.name))
        return ad.flatten(ad.add(ad.matmul(h, self.w2), self.b2))


class AlignmentModel:
    """Trainable student stack; the (frozen) teacher lives outside it."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.text_encoder = TextEncoder(config.vocab_size, config.d, config.text_blocks,
                                        config.n_max, seed=config.seed,
                                        positional=config.positional)
        self.image_encoder = ImageEncoder(config.patch, config.channels, config.d,
                                          config.image_blocks, config.max_patches,
                                          seed=config.seed, positional=config.positional)
        self.text_proj = ProjectionHead(config.d, config.teacher_width, config.proj_hidden,
                                        seed=config.seed, name="text_proj")
        self.image_proj = ProjectionHead(config.d, config.teacher_width, config.proj_hidden,
                                         seed=config.seed, name="image_proj")
        self.fusion = build_fusion(config.fusion_config(), seed=config.seed)
        self.classifier = Classifier(self.fusion.output_width, config.num_classes,
                                     hidden=config.teacher_width, dropout=config.dropout,
                                     seed=config.seed)

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for part in (self.text_encoder, self.image_encoder, self.text_proj,
                     self.image_proj, self.fusion, self.classifier):
            out.extend(part.parameters())
        return out

    def _fuse(self, sample, text_tokens_proj, image_tokens_proj,
              lexicon: SentimentLexicon | None):
        kwargs = dict(text_mask=sample.mask)
        if self.config.fusion_variant == "knowledge_cross_attention":
            if sample.aux_tokens is None:
                raise ConfigError(
                    f"sample {sample.id} has no auxiliary text; knowledge fusion needs it")
            aux_feats = self.text_encoder.encode(sample.aux_tokens)
            kwargs.update(
                aux_feats=self.text_proj.project_tokens(aux_feats),
                text_tokens=[str(t) for t in sample.tokens],
                aux_tokens=[str(t) for t in sample.aux_tokens],
                lexicon=lexicon,
            )
        return self.fusion(text_tokens_proj, image_tokens_proj, **kwargs)

    def forward_sample(self, sample, train: bool = False, step: int = 0,
                       lexicon: SentimentLexicon | None = None):
        text_feats = self.text_encoder.encode(sample.tokens, sample.mask)
        image_feats = self.image_encoder.encode(sample.image)
        text_vec = self.text_proj.project(text_feats, sample.mask)
        image_vec = self.image_proj.project(image_feats)
        fused = self._fuse(sample, self.text_proj.project_tokens(text_feats),
                           self.image_proj.project_tokens(image_feats), lexicon)
        rng_key = (self.config.seed, step, sample.id)
        fused = ad.dropout(fused, self.config.dropout, train,
                           counter_rng("dropout", *rng_key, "fused"))
        logits = self.classifier(fused, train, rng_key)
        return text_vec, image_vec, logits

    def forward_batch(self, samples, train: bool = False, step: int = 0,
                      lexicon: SentimentLexicon | None = None) -> BatchOutput:
        text_vecs, image_vecs, logit_rows = [], [], []
        for sample in samples:
            t, i, lg = self.forward_sample(sample, train=train, step=step, lexicon=lexicon)
            text_vecs.append(t)
            image_vecs.append(i)
            logit_rows.append(lg)
        return BatchOutput(logits=ad.stack_rows(logit_rows),
                           text_vecs=ad.stack_rows(text_vecs),
                           image_vecs=ad.stack_rows(image_vecs))

    # --- checkpoint state ----------------------------------------------------

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(name, t.data.copy()) for name, t in self.parameters()]

    def load_state(self, blocks: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        missing = params.keys() - blocks.keys()
        extra = blocks.keys() - params.keys()
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in params.items():
            if blocks[name].shape != t.data.shape:
                raise ConfigError(
                    f"checkpoint block {name}: shape {blocks[name].shape} vs {t.data.shape}")
            t.data = blocks[name].astype(np.float64).copy()
