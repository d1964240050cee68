"""Dense tensors with reverse-mode differentiation.

Only the handful of ops a small decoder-only transformer needs. Shapes are
explicit: elementwise ops require equal shapes, the one exception being a
trailing-axis vector (bias / layernorm affine) applied row-wise. Matrix
products accept either equal leading batch axes or a plain 2-D right operand.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure

DEFAULT_DTYPE = np.float64
LAYERNORM_EPS = 1e-5

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents: tuple = (), _backward=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else getattr(data, "dtype", DEFAULT_DTYPE))
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.isfinite(arr).all():
            raise NumericalFailure(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if seed is None:
            if self.data.size != 1:
                raise InvalidArgument("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad)
        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _result(data: np.ndarray, parents: tuple, backward: Callable) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=track, _parents=parents if track else (),
                  _backward=backward if track else None)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector over ``a``'s last axis."""
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    if b.data.ndim == 1 and a.shape[-1:] == b.shape:
        axes = tuple(range(a.data.ndim - 1))
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)))
    raise InvalidArgument(f"add: shapes {a.shape} and {b.shape} are incompatible")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[..., k, n]`` with matching batch axes, or ``b`` 2-D."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidArgument(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    if b.data.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise InvalidArgument(f"matmul: batch axes {a.shape[:-2]} and {b.shape[:-2]} differ")
    out = a.data @ b.data

    def backward(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        if b.data.ndim == 2 and a.data.ndim > 2:
            db = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            db = np.swapaxes(a.data, -1, -2) @ g
        return da, db

    return _result(out, (a, b), backward)


def transpose_last(a: Tensor) -> Tensor:
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """``[..., n, d] -> [..., heads, n, d / heads]``."""
    *lead, n, d = x.shape
    if d % n_heads:
        raise InvalidArgument(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    out = np.moveaxis(x.data.reshape(*lead, n, n_heads, dh), -2, -3)

    def backward(g):
        return (np.moveaxis(g, -3, -2).reshape(*lead, n, d),)

    return _result(np.ascontiguousarray(out), (x,), backward)


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, h, n, dh = x.shape
    out = np.moveaxis(x.data, -3, -2).reshape(*lead, n, h * dh)

    def backward(g):
        return (np.ascontiguousarray(np.moveaxis(g.reshape(*lead, n, h, dh), -2, -3)),)

    return _result(out, (x,), backward)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the second-to-last axis (used by the KV cache)."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise InvalidArgument(f"concat_rows: shapes {a.shape} and {b.shape} differ off-axis")
    n = a.shape[-2]
    out = np.concatenate([a.data, b.data], axis=-2)
    return _result(out, (a, b), lambda g: (g[..., :n, :], g[..., n:, :]))


def _mask_array(mask, shape: tuple[int, ...]) -> np.ndarray:
    m = getattr(mask, "entries", mask)
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.shape[-2:] != shape[-2:]:
        raise InvalidArgument(f"mask shape {m.shape} does not match scores {shape}")
    return m


def masked_softmax(scores: Tensor, mask, scale: float) -> Tensor:
    """Row-wise ``softmax(scores * scale + mask)``.

    ``mask`` is an AttentionMask, an n x m array, or a single row; it is shared
    across any leading batch/head axes.
    """
    m = _mask_array(mask, scores.shape)
    z = scores.data * scale + m.astype(scores.dtype, copy=False)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dz = y * (g - (g * y).sum(axis=-1, keepdims=True))
        return (dz * scale,)

    return _result(y, (scores,), backward)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    d = x.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise InvalidArgument("layernorm over an empty axis")
    if eps <= 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise InvalidArgument(f"layernorm affine shapes {gain.shape}, {bias.shape} != ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    axes = tuple(range(x.data.ndim - 1))

    def backward(g):
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(out, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    c = math.sqrt(2.0 / math.pi)
    x2 = x.data * x.data
    u = c * (x.data + 0.044715 * x2 * x.data)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _result(out, (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidArgument(f"token ids must lie in [0, {table.shape[0]})")

    def backward(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dt,)

    return _result(table.data[ids], (table,), backward)


def cross_entropy(logits: Tensor, targets, loss_mask) -> Tensor:
    """Mean negative log-likelihood over positions where ``loss_mask`` is true.

    ``logits`` is ``[..., vocab]``; ``targets`` and ``loss_mask`` match its
    leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    keep = np.asarray(loss_mask, dtype=bool)
    lead = logits.shape[:-1]
    if targets.shape != lead or keep.shape != lead:
        raise InvalidArgument(f"targets {targets.shape} / loss_mask {keep.shape} must match logits {lead}")
    count = int(keep.sum())
    if count == 0:
        raise InvalidArgument("loss_mask selects no positions")
    v = logits.shape[-1]
    z = logits.data.reshape(-1, v)
    t = targets.reshape(-1)
    k = keep.reshape(-1)
    if np.any((t[k] < 0) | (t[k] >= v)):
        raise InvalidArgument(f"targets must lie in [0, {v})")
    t = np.where(k, t, 0)
    zmax = z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
    nll = logsum - z[np.arange(len(t)), t]
    loss = float((nll * k).sum() / count)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(len(t)), t] -= 1.0
        p *= (k / count)[:, None]
        return ((g * p).reshape(logits.shape),)

    return _result(np.array(loss, dtype=logits.dtype), (logits,), backward)


def sum_all(a: Tensor) -> Tensor:
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def sum_squares(a: Tensor) -> Tensor:
    return _result(np.array((a.data ** 2).sum()), (a,), lambda g: (2.0 * g * a.data,))


def weighted_sum(a: Tensor, w: np.ndarray) -> Tensor:
    """Scalar ``sum(a * w)`` for a fixed weight array; handy for probing gradients."""
    w = np.asarray(w, dtype=a.dtype)
    if w.shape != a.shape:
        raise InvalidArgument(f"weights {w.shape} must match {a.shape}")
    return _result(np.array((a.data * w).sum()), (a,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(f: Callable[[], Tensor], params: Tensor | Sequence[Tensor], h: float = 1e-5,
               n_samples: int | None = 64, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must recompute the scalar from the current values of ``params``.
    ``n_samples`` coordinates are drawn per parameter (all when None).
    Relative error is ``|a - n| / max(|a| + |n|, floor)``.
    """
    params = [params] if isinstance(params, Tensor) else list(params)
    if not 1e-6 <= h <= 1e-4:
        raise InvalidArgument(f"step h must lie in [1e-6, 1e-4], got {h}")
    for p in params:
        if p.dtype != np.float64:
            raise InvalidArgument("grad_check needs 64-bit parameters")
        p.requires_grad = True
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise InvalidArgument("grad_check needs a scalar function")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if n_samples is not None and flat.size > n_samples:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = f().item()
            flat[k] = orig - h
            down = f().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericalFailure("non-finite value during finite differencing")
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[k]
            worst = max(worst, abs(a - numeric) / max(abs(a) + abs(numeric), floor))
    return worst


# ---------------------------------------------------------------------------
# optimization


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "ADAM"
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in ("SGD", "ADAM"):
            raise InvalidArgument(f"optimizer kind must be SGD or ADAM, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.lr <= 0:
            raise InvalidArgument(f"lr must be positive, got {self.lr}")


@dataclass
class OptimizerState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def optimizer_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimizerState,
                   config: OptimizerConfig) -> OptimizerState:
    """In-place SGD or Adam update; weight decay is decoupled (AdamW-style)."""
    if len(params) != len(grads):
        raise InvalidArgument(f"{len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g is not None and g.shape != p.shape:
            raise InvalidArgument(f"gradient shape {g.shape} does not match parameter {p.shape}")
    state.step += 1
    if config.kind == "ADAM" and not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    b1, b2 = config.betas
    for k, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if config.weight_decay:
            p.data -= config.lr * config.weight_decay * p.data
        if config.kind == "SGD":
            p.data -= config.lr * g
            continue
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** state.step)
        vhat = v / (1 - b2 ** state.step)
        p.data -= config.lr * mhat / (np.sqrt(vhat) + config.eps)
    return state


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
