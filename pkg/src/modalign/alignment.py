"""Projection heads and the teacher-guided contrastive loss stack.

Each modality's student features are pooled, pushed through a two-layer
MLP into teacher width, and pulled toward the frozen teacher embedding of
the same sample with a symmetric pair of in-batch InfoNCE losses. This is
student-to-teacher alignment per modality; there is deliberately no
direct text-to-image contrastive term, and the API offers no way to
build one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, counter_rng, parameter
from .errors import DomainError, ParameterError, ShapeError


class ProjectionHead:
    """Mask-aware mean pool, then affine -> tanh -> affine into teacher width."""

    def __init__(self, d_in: int, d_out: int, hidden: int = 128, seed: int = 0, name: str = "proj"):
        rng = counter_rng("init", seed, name)
        self.name = name
        self.w1 = parameter((d_in, hidden), rng)
        self.b1 = parameter(hidden, rng, "zeros")
        self.w2 = parameter((hidden, d_out), rng)
        self.b2 = parameter(d_out, rng, "zeros")

    def parameters(self):
        return [(f"{self.name}.{n}", getattr(self, n)) for n in ("w1", "b1", "w2", "b2")]

    def _mlp(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(ad.tanh(ad.add(ad.matmul(x, self.w1), self.b1)), self.w2), self.b2)

    def project(self, features: Tensor, mask=None) -> Tensor:
        """Pool k x d features over positions, then map to a d_out vector."""
        k = features.shape[0]
        if mask is None:
            weights = np.full((1, k), 1.0 / k)
        else:
            m = np.asarray(mask, dtype=np.float64)
            if m.size != k:
                raise ShapeError(f"mask of length {m.size} for {k} positions")
            count = m.sum()
            if count == 0:
                raise DomainError("cannot pool a fully masked input")
            weights = (m / count)[None, :]
        pooled = ad.matmul(Tensor(weights), features)
        return ad.flatten(self._mlp(pooled))

    def project_tokens(self, features: Tensor) -> Tensor:
        """Apply the same MLP position-wise: k x d -> k x d_out."""
        return self._mlp(features)


@dataclass
class AlignmentLoss:
    """Decomposed contrastive loss; `tensor` is the differentiable total."""

    tau: float
    l_ic: float
    l_ci: float
    l_tc: float
    l_ct: float
    tensor: Tensor

    @property
    def l_i(self) -> float:
        return 0.5 * (self.l_ic + self.l_ci)

    @property
    def l_t(self) -> float:
        return 0.5 * (self.l_tc + self.l_ct)

    @property
    def l_con(self) -> float:
        return 0.5 * (self.l_i + self.l_t)


def infonce_directional(anchors: Tensor, targets: Tensor, tau: float) -> Tensor:
    """In-batch InfoNCE with cosine similarities and diagonal positives.

    Row k of the anchor matrix is scored against every target row; the
    matched index is k. Returns the batch-mean negative log softmax of
    the positive entry.
    """
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if anchors.data.ndim != 2 or targets.data.ndim != 2 or anchors.shape != targets.shape:
        raise ShapeError(f"anchor/target shapes disagree: {anchors.shape} vs {targets.shape}")
    sims = ad.matmul(ad.normalize_rows(anchors), ad.transpose(ad.normalize_rows(targets)))
    return ad.cross_entropy(ad.scale(sims, 1.0 / tau), np.arange(anchors.shape[0]))


def alignment_loss(student_image: Tensor, teacher_image: Tensor,
                   student_text: Tensor, teacher_text: Tensor, tau: float) -> AlignmentLoss:
    """Symmetric student<->teacher InfoNCE per modality, averaged.

    The teacher side is detached, so no gradient ever reaches teacher
    embeddings or parameters.
    """
    shapes = {student_image.shape, teacher_image.shape, student_text.shape, teacher_text.shape}
    if len(shapes) != 1:
        raise ShapeError(f"alignment inputs must share one B x d shape, got {sorted(shapes)}")
    c_i = teacher_image.detach()
    c_t = teacher_text.detach()
    l_ic = infonce_directional(student_image, c_i, tau)   # student-image anchors
    l_ci = infonce_directional(c_i, student_image, tau)   # teacher-image anchors
    l_tc = infonce_directional(student_text, c_t, tau)
    l_ct = infonce_directional(c_t, student_text, tau)
    image_term = ad.scale(ad.add(l_ic, l_ci), 0.5)
    text_term = ad.scale(ad.add(l_tc, l_ct), 0.5)
    total = ad.scale(ad.add(image_term, text_term), 0.5)
    return AlignmentLoss(tau=tau, l_ic=l_ic.item(), l_ci=l_ci.item(),
                         l_tc=l_tc.item(), l_ct=l_ct.item(), tensor=total)
