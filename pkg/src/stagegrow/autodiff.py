"""Minimal reverse-mode autodiff over dense numpy arrays.

Just enough machinery for a small decoder: a `Tensor` wrapping an ndarray,
a handful of differentiable ops, and topological-order backpropagation.
Ops are dtype-generic (float32 for training, float64 for gradient checks)
with reductions accumulated in float64 where it matters numerically.

Every forward op validates that its output is finite and raises
NonFiniteError otherwise, so overflow surfaces at the op that produced it
instead of three layers later.  Backward passes are not guarded: the
training loop inspects gradients itself so it can skip a bad step rather
than crash.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_FLOAT_KINDS = ("f",)


class NonFiniteError(ArithmeticError):
    """A forward op produced inf or nan from finite inputs."""


def _ensure_finite(data: np.ndarray, op: str) -> None:
    if data.dtype.kind not in _FLOAT_KINDS:
        return
    # Cheap probe: any inf/nan in the array drags a float64 sum non-finite.
    if np.isfinite(np.sum(data, dtype=np.float64)):
        return
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Backpropagate from a scalar; fills .grad on every grad-requiring node."""
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = _node(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _back():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad, b.data.shape))
        out._backward = _back
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = _node(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _back():
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = _back
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = _node(a.data * s, (a,), "scale")
    if out.requires_grad:
        def _back():
            a.accumulate_grad(out.grad * s)
        out._backward = _back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    out = _node(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _back():
            g = out.grad
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(
                    g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(
                    np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
        out._backward = _back
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def silu(x: Tensor) -> Tensor:
    sig = _sigmoid(x.data)
    out = _node(x.data * sig, (x,), "silu")
    if out.requires_grad:
        def _back():
            x.accumulate_grad(out.grad * sig * (1.0 + x.data * (1.0 - sig)))
        out._backward = _back
    return out


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=-1, keepdims=True)
    out = _node(y, (x,), "softmax")
    if out.requires_grad:
        def _back():
            g = out.grad
            inner = (g * y).sum(axis=-1, keepdims=True)
            x.accumulate_grad(y * (g - inner))
        out._backward = _back
    return out


def rms_norm(x: Tensor, gain: Tensor, eps: float = 1e-5) -> Tensor:
    """Root-mean-square normalization over the last axis, scaled by `gain`."""
    n = x.data.shape[-1]
    ms = np.mean(np.square(x.data), axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    normed = x.data * inv
    out = _node(normed * gain.data, (x, gain), "rms_norm")
    if out.requires_grad:
        def _back():
            g = out.grad
            if gain.requires_grad:
                gain.accumulate_grad(_unbroadcast(g * normed, gain.data.shape))
            if x.requires_grad:
                du = g * gain.data
                proj = (du * x.data).sum(axis=-1, keepdims=True) / n
                x.accumulate_grad(inv * du - (inv ** 3) * x.data * proj)
        out._backward = _back
    return out


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup: weight is (vocab, dim), ids any integer array."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in ("i", "u"):
        raise ValueError(f"ids must be integers, got dtype {ids.dtype}")
    vocab = weight.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"ids out of range for vocab {vocab}")
    out = _node(weight.data[ids], (weight,), "embedding")
    if out.requires_grad:
        def _back():
            gw = np.zeros_like(weight.data)
            np.add.at(gw, ids, out.grad)
            weight.accumulate_grad(gw)
        out._backward = _back
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean token cross-entropy; the loss is always a float64 scalar.

    logits: (..., vocab); targets: integer array of the leading shape.
    Log-sum-exp is max-subtracted; the mean reduction runs in float64.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits "
            f"{logits.data.shape[:-1]}")
    flat = logits.data.reshape(-1, logits.data.shape[-1])
    tgt = targets.reshape(-1)
    vocab = flat.shape[1]
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab):
        raise ValueError(f"targets out of range for vocab {vocab}")
    m = flat.max(axis=1, keepdims=True)
    shifted = flat - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    picked = flat[np.arange(flat.shape[0]), tgt]
    losses = (lse - picked).astype(np.float64)
    out = _node(np.asarray(losses.mean()), (logits,), "cross_entropy")
    if out.requires_grad:
        def _back():
            probs = np.exp(shifted)
            probs /= probs.sum(axis=1, keepdims=True)
            probs[np.arange(flat.shape[0]), tgt] -= 1.0
            g = (float(out.grad) / flat.shape[0]) * probs
            logits.accumulate_grad(g.reshape(logits.data.shape).astype(
                logits.data.dtype))
        out._backward = _back
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _node(x.data.reshape(shape), (x,), "reshape")
    if out.requires_grad:
        def _back():
            x.accumulate_grad(out.grad.reshape(x.data.shape))
        out._backward = _back
    return out


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.data.ndim)))
    out = _node(x.data.transpose(axes), (x,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))
        def _back():
            x.accumulate_grad(out.grad.transpose(inverse))
        out._backward = _back
    return out


def _rotate_half(v: np.ndarray) -> np.ndarray:
    half = v.shape[-1] // 2
    return np.concatenate([-v[..., half:], v[..., :half]], axis=-1)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotary position mixing: x * cos + rotate_half(x) * sin.

    x is (..., seq, head_dim) with even head_dim; cos/sin are constant
    (seq, head_dim) tables (see model.rope_cache).
    """
    if x.data.shape[-1] % 2 != 0:
        raise ValueError(f"head_dim must be even, got {x.data.shape[-1]}")
    if cos.shape != x.data.shape[-2:] or sin.shape != x.data.shape[-2:]:
        raise ValueError(
            f"cos/sin shape {cos.shape} must equal {x.data.shape[-2:]}")
    out = _node(x.data * cos + _rotate_half(x.data) * sin, (x,), "rope")
    if out.requires_grad:
        def _back():
            g = out.grad
            gs = g * sin
            half = gs.shape[-1] // 2
            adj = np.concatenate([gs[..., half:], -gs[..., :half]], axis=-1)
            x.accumulate_grad(g * cos + adj)
        out._backward = _back
    return out


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar of the same dtype."""
    out = _node(np.asarray(x.data.sum()), (x,), "sum_all")
    if out.requires_grad:
        def _back():
            x.accumulate_grad(np.broadcast_to(out.grad, x.data.shape).copy())
        out._backward = _back
    return out


@dataclass(frozen=True)
class GradCheckReport:
    max_abs_diff: float
    max_rel_error: float
    worst_index: tuple[int, ...]
    tolerance: float
    passed: bool


def grad_check(f, x: Tensor, tolerance: float = 1e-3,
               step: float = 1e-3) -> GradCheckReport:
    """Compare f's reverse-mode gradient at x against central differences.

    f maps a Tensor to a scalar Tensor and must be deterministic.  Run with
    float64 data; float32 round-off easily exceeds any sensible tolerance.
    """
    x.zero_grad()
    loss = f(x)
    loss.backward()
    if x.grad is None:
        raise ValueError("f does not depend on x (no gradient reached it)")
    analytic = x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = float(f(x).data)
        flat[i] = keep - step
        lo = float(f(x).data)
        flat[i] = keep
        num_flat[i] = (hi - lo) / (2.0 * step)

    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = diff / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_abs_diff=float(diff.reshape(-1)[worst]),
        max_rel_error=float(rel.reshape(-1)[worst]),
        worst_index=tuple(np.unravel_index(worst, x.data.shape)),
        tolerance=tolerance,
        passed=bool(rel.max() <= tolerance),
    )
