"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Double precision throughout, row-major storage, 0/1/2-dimensional arrays
only. Broadcasting is restricted to scalar-tensor and row-vector (bias)
forms; everything else must match shapes exactly, which keeps the
gradient code short enough to audit by hand.
"""

from __future__ import annotations

import contextlib
import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, ParameterError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph capture inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def counter_rng(*key: object) -> np.random.Generator:
    """Deterministic generator keyed by an arbitrary tuple.

    Counter-based (Philox): the stream depends only on the key, never on
    call order, so runs are exactly reproducible.
    """
    digest = hashlib.blake2b(repr(key).encode(), digest_size=16).digest()
    words = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words))


class Tensor:
    """A float64 array plus an optional gradient accumulator.

    Tensors produced by ops carry a backward closure; calling
    ``backward()`` on a scalar result accumulates gradients additively
    into every reachable tensor with ``requires_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A grad-free view of the same values."""
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS: training graphs exceed Python's recursion limit.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Additive accumulation: two backward contributions to one tensor sum.
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary_mode(a: Tensor, b: Tensor) -> str:
    """Classify the allowed broadcast: same-shape, scalar, or row vector."""
    if a.shape == b.shape:
        return "same"
    if b.data.ndim == 0:
        return "scalar"
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row"
    raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, mode: str) -> np.ndarray:
    if mode == "same":
        return g
    if mode == "scalar":
        return np.asarray(g.sum())
    return g.sum(axis=0)  # row vector broadcast over rows


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _binary_mode(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, _unbroadcast(g, mode))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _binary_mode(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -_unbroadcast(g, mode))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    """Hadamard product (same shape, scalar, or row-vector operand)."""
    a, b = _as_tensor(a), _as_tensor(b)
    mode = _binary_mode(a, b)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, mode))

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * c)

    return _make(a.data * c, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.T)

    return _make(np.ascontiguousarray(a.data.T), (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * (1.0 - y * y))

    return _make(y, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * y)

    return _make(y, (a,), bwd)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive entries")

    def bwd(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size

        def bwd(g):
            if a.requires_grad:
                _accum(a, np.full_like(a.data, float(g) / n))

        return _make(np.asarray(a.data.mean()), (a,), bwd)
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ShapeError(f"axis mean needs a 2-D tensor, got {a.shape} axis={axis}")
    n = a.shape[axis]

    def bwd_axis(g):
        if a.requires_grad:
            spread = g[None, :] if axis == 0 else g[:, None]
            _accum(a, np.broadcast_to(spread / n, a.shape).copy())

    return _make(a.data.mean(axis=axis), (a,), bwd_axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    sizes = [t.shape[axis] if t.data.ndim > axis else t.data.size for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                _accum(t, g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    vectors = [_as_tensor(v) for v in vectors]
    if any(v.data.ndim != 1 for v in vectors):
        raise ShapeError("stack_rows takes 1-D tensors")

    def bwd(g):
        for i, v in enumerate(vectors):
            if v.requires_grad:
                _accum(v, g[i])

    return _make(np.stack([v.data for v in vectors]), vectors, bwd)


def flatten(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.shape))

    return _make(a.data.reshape(-1), (a,), bwd)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup (embedding); gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.intp)

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(table.data[ids], (table,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by row-max subtraction."""
    a = _as_tensor(a)
    x = a.data if a.data.ndim == 2 else a.data[None, :]
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    if a.data.ndim == 1:
        y = y[0]

    def bwd(g):
        if a.requires_grad:
            if y.ndim == 1:
                _accum(a, y * (g - np.dot(g, y)))
            else:
                _accum(a, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _make(y, (a,), bwd)


def layer_norm(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row to mean 0, variance 1 (no affine)."""
    a = _as_tensor(a)
    x = a.data if a.data.ndim == 2 else a.data[None, :]
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv
    if a.data.ndim == 1:
        y2, inv2 = y[0], inv[0]
    else:
        y2, inv2 = y, inv

    def bwd(g):
        if not a.requires_grad:
            return
        gg = g if g.ndim == 2 else g[None, :]
        yy = y
        n = x.shape[1]
        gm = gg.mean(axis=1, keepdims=True)
        gy = (gg * yy).mean(axis=1, keepdims=True)
        gx = inv * (gg - gm - yy * gy)
        _accum(a, gx if a.data.ndim == 2 else gx[0])
        del n

    return _make(y2, (a,), bwd)


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when off. Differentiates through the mask."""
    if not (0.0 <= p < 1.0):
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(a.data * mask, (a,), bwd)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; rows are samples.

    Accepts a 1-D logit vector with an int label, or a matrix with a
    label per row.
    """
    single = logits.data.ndim == 1
    x = logits.data[None, :] if single else logits.data
    idx = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if idx.shape[0] != x.shape[0]:
        raise ShapeError(f"{idx.shape[0]} labels for {x.shape[0]} logit rows")
    if np.any(idx < 0) or np.any(idx >= x.shape[1]):
        raise DomainError(f"label out of range [0, {x.shape[1]}): {labels}")
    b = x.shape[0]
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + x.max(axis=1)
    value = float((lse - x[np.arange(b), idx]).mean())
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    def bwd(g):
        if logits.requires_grad:
            gx = probs.copy()
            gx[np.arange(b), idx] -= 1.0
            gx *= float(g) / b
            _accum(logits, gx[0] if single else gx)

    return _make(np.asarray(value), (logits,), bwd)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v) for 1-D tensors; rejects zero-norm inputs."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal 1-D shapes, got {u.shape}, {v.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine_similarity undefined for zero-norm input")
    c = float(np.dot(u.data, v.data) / (nu * nv))

    def bwd(g):
        g = float(g)
        if u.requires_grad:
            _accum(u, g * (v.data / (nu * nv) - c * u.data / (nu * nu)))
        if v.requires_grad:
            _accum(v, g * (u.data / (nu * nv) - c * v.data / (nv * nv)))

    return _make(np.asarray(c), (u, v), bwd)


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"normalize_rows needs a 2-D tensor, got {a.shape}")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("normalize_rows undefined for zero-norm rows")
    y = a.data / norms

    def bwd(g):
        if a.requires_grad:
            # d/dx (x/|x|) = (g - y (g.y)) / |x| per row
            _accum(a, (g - y * (g * y).sum(axis=1, keepdims=True)) / norms)

    return _make(y, (a,), bwd)


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    max_entries_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    For large tensors a seeded random subset of entries is probed; the
    analytic side is restricted to the same entries. The error measure is
    ||a - n||_inf / (max(||a||_inf, ||n||_inf) + 1e-12) over probed
    entries, which stays meaningful when the true gradient is zero.
    """
    for t in inputs:
        t.zero_grad()
    out = f(inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = counter_rng("grad_check", seed)
    worst = 0.0
    for t, a_grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n_entries = flat.size
        if max_entries_per_tensor is not None and n_entries > max_entries_per_tensor:
            idxs = rng.choice(n_entries, size=max_entries_per_tensor, replace=False)
        else:
            idxs = np.arange(n_entries)
        num = np.empty(len(idxs))
        for j, i in enumerate(idxs):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(inputs).data)
            flat[i] = orig - step
            lo = float(f(inputs).data)
            flat[i] = orig
            num[j] = (hi - lo) / (2.0 * step)
        ana = a_grad.reshape(-1)[idxs]
        denom = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0)) + 1e-12
        worst = max(worst, float(np.abs(ana - num).max(initial=0.0) / denom))
    for t in inputs:
        t.zero_grad()
    return worst


def parameter(shape: tuple[int, ...] | int, rng: np.random.Generator, scheme: str = "xavier") -> Tensor:
    """A trainable tensor with seeded init (xavier for matrices, zeros/ones for 1-D)."""
    if isinstance(shape, int):
        shape = (shape,)
    if scheme == "zeros":
        data = np.zeros(shape)
    elif scheme == "ones":
        data = np.ones(shape)
    else:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        fan_out = shape[1] if len(shape) > 1 else shape[0]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        data = rng.uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def iter_leaves(root: Tensor) -> Iterable[Tensor]:
    """All leaf tensors (no parents) reachable from a graph root."""
    for node in _toposort(root):
        if not node._parents:
            yield node
