"""Training objective, optimizer, metrics, and the alignment analyses.

The total objective is alpha * L_con + L_ce; alignment acts as an
auxiliary task next to the classification loss. Training is
deterministic under (config, seed): dropout is counter-keyed, batch
order is seeded per epoch, and the optimizer touches student parameters
only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .alignment import AlignmentLoss, alignment_loss
from .autodiff import Tensor, no_grad
from .data import Dataset, batch_iter
from .errors import ConfigError, ParameterError

HISTORY_COLUMNS = ("epoch", "L_ic", "L_ci", "L_i", "L_t", "L_con", "L_ce", "total",
                   "acc", "macro_P", "macro_R", "macro_F1")


@dataclass
class TrainConfig:
    alpha: float = 1.0
    tau: float = 0.1
    batch_size: int = 8
    learning_rate: float = 1e-3   # desk scale; paper-scale preset uses 1e-5
    epochs: int = 15
    warmup: float = 0.1
    weight_decay: float = 0.01
    dropout: float = 0.1
    seed: int = 0
    drop_duplicates: bool = True
    alignment_enabled: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ParameterError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.warmup < 1.0:
            raise ParameterError(f"warmup proportion must be in [0, 1), got {self.warmup}")
        if self.tau <= 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        """The documented large-scale preset (pretrained-encoder learning rate)."""
        base = dict(alpha=1.0, tau=0.1, batch_size=8, learning_rate=1e-5, epochs=15,
                    warmup=0.1, weight_decay=0.01, dropout=0.1)
        base.update(overrides)
        return cls(**base)


@dataclass
class LossReport:
    l_ic: float = 0.0
    l_ci: float = 0.0
    l_i: float = 0.0
    l_t: float = 0.0
    l_con: float = 0.0
    l_ce: float = 0.0
    total: float = 0.0
    tensor: Tensor | None = None


def total_loss(align: AlignmentLoss | None, ce: Tensor, alpha: float) -> LossReport:
    """Weighted sum of contrastive and cross-entropy losses.

    The contrastive term is always reported when available, but enters
    the differentiable total only with weight alpha (alpha = 0 recovers
    the alignment-free baseline exactly).
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    report = LossReport(l_ce=ce.item())
    if align is not None:
        report.l_ic, report.l_ci = align.l_ic, align.l_ci
        report.l_i, report.l_t, report.l_con = align.l_i, align.l_t, align.l_con
    if align is not None and alpha != 0.0:
        report.tensor = ad.add(ad.scale(align.tensor, alpha), ce)
    else:
        report.tensor = ce
    report.total = alpha * report.l_con + report.l_ce
    return report


def lr_schedule(step: int, total_steps: int, peak_lr: float, warmup_prop: float) -> float:
    """Linear ramp to peak over the warmup fraction, then linear decay to 0."""
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    warmup_steps = warmup_prop * total_steps
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps == warmup_steps:
        return 0.0 if step >= total_steps else peak_lr
    return peak_lr * (total_steps - step) / (total_steps - warmup_steps)


class AdamW:
    """Decoupled weight decay Adam; decay hits matrices only (never 1-D
    tensors, i.e. biases and layer-norm gains)."""

    def __init__(self, params: list[tuple[str, Tensor]], weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for _, t in params]
        self.v = [np.zeros_like(t.data) for _, t in params]
        self.t = 0

    def decayed(self, tensor: Tensor) -> bool:
        return tensor.data.ndim >= 2

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (_, p) in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            update = (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if self.decayed(p):
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


# --- metrics -----------------------------------------------------------------

@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    per_class: list[tuple[float, float, float]]   # (precision, recall, f1)
    macro_p: float
    macro_r: float
    macro_f1: float


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    c = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        c[t, p] += 1
    return c


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    """Accuracy plus per-class and macro P/R/F1; rows are true labels.

    Zero denominators yield 0 (affects macro averages on degenerate
    predictions).
    """
    c = np.asarray(confusion, dtype=np.int64)
    n = c.shape[0]
    per_class = []
    for k in range(n):
        tp = int(c[k, k])
        col = int(c[:, k].sum())
        row = int(c[k, :].sum())
        p = tp / col if col else 0.0
        r = tp / row if row else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class.append((p, r, f1))
    total = int(c.sum())
    acc = float(np.trace(c)) / total if total else 0.0
    return MetricsReport(
        confusion=c,
        accuracy=acc,
        per_class=per_class,
        macro_p=sum(x[0] for x in per_class) / n,
        macro_r=sum(x[1] for x in per_class) / n,
        macro_f1=sum(x[2] for x in per_class) / n,
    )


def evaluate(model, dataset: Dataset, lexicon=None) -> MetricsReport:
    """Argmax predictions (ties break toward the lowest class index)."""
    y_true, y_pred = [], []
    with no_grad():
        for sample in dataset:
            _, _, logits = model.forward_sample(sample, train=False, lexicon=lexicon)
            y_true.append(sample.label)
            y_pred.append(int(np.argmax(logits.data)))
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, model.config.num_classes))


def heatmap(model, samples, lexicon=None) -> np.ndarray:
    """Pairwise cosine similarity of projected text rows vs image columns."""
    with no_grad():
        text, image = [], []
        for sample in samples:
            t, i, _ = model.forward_sample(sample, train=False, lexicon=lexicon)
            text.append(t.data)
            image.append(i.data)
    tmat = np.stack(text)
    imat = np.stack(image)
    tmat = tmat / np.linalg.norm(tmat, axis=1, keepdims=True)
    imat = imat / np.linalg.norm(imat, axis=1, keepdims=True)
    return tmat @ imat.T


def diagonal_max_rate(sim: np.ndarray) -> float:
    """Fraction of rows whose diagonal entry is the row maximum."""
    return float(np.mean(np.argmax(sim, axis=1) == np.arange(sim.shape[0])))


# --- training loop -----------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    l_ic: float
    l_ci: float
    l_i: float
    l_t: float
    l_con: float
    l_ce: float
    total: float
    acc: float
    macro_p: float
    macro_r: float
    macro_f1: float

    def row(self) -> list:
        return [self.epoch, self.l_ic, self.l_ci, self.l_i, self.l_t, self.l_con,
                self.l_ce, self.total, self.acc, self.macro_p, self.macro_r, self.macro_f1]


def write_history_csv(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in rec.row()])


def write_heatmap_csv(path, sim: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in sim:
            writer.writerow([f"{v:.10g}" for v in row])


def train(model, teacher, dataset: Dataset, config: TrainConfig,
          eval_dataset: Dataset | None = None, lexicon=None) -> list[EpochRecord]:
    """Optimize the student stack; returns the per-epoch history.

    The teacher is consulted for embeddings only; the loop asserts its
    parameters are disjoint from the optimizer's list.
    """
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    params = model.parameters()
    teacher_ids = {id(t) for _, t in teacher.parameters()}
    if any(id(t) in teacher_ids for _, t in params):
        raise ConfigError("teacher parameters leaked into the optimizer list")
    optimizer = AdamW(params, weight_decay=config.weight_decay)
    epoch_batches = [batch_iter(dataset, config.batch_size, config.seed, epoch,
                                config.drop_duplicates) for epoch in range(config.epochs)]
    total_steps = sum(len(b) for b in epoch_batches)
    history = []
    step = 0
    for epoch, batches in enumerate(epoch_batches, start=1):
        sums = np.zeros(7)
        for batch in batches:
            out = model.forward_batch(batch, train=True, step=step, lexicon=lexicon)
            ce = ad.cross_entropy(out.logits, [s.label for s in batch])
            align = None
            if config.alignment_enabled:
                teacher_t, teacher_i = [], []
                for s in batch:
                    c_t, c_i = teacher.embed(s)
                    teacher_t.append(c_t)
                    teacher_i.append(c_i)
                align = alignment_loss(out.image_vecs, Tensor(np.stack(teacher_i)),
                                       out.text_vecs, Tensor(np.stack(teacher_t)),
                                       config.tau)
            report = total_loss(align, ce, config.alpha)
            report.tensor.backward()
            optimizer.step(lr_schedule(step, total_steps, config.learning_rate, config.warmup))
            optimizer.zero_grad()
            step += 1
            sums += [report.l_ic, report.l_ci, report.l_i, report.l_t,
                     report.l_con, report.l_ce, report.total]
        means = sums / max(len(batches), 1)
        metrics = evaluate(model, eval_dataset if eval_dataset is not None else dataset,
                           lexicon=lexicon)
        history.append(EpochRecord(epoch, *means, metrics.accuracy, metrics.macro_p,
                                   metrics.macro_r, metrics.macro_f1))
    return history
