"""Dense f32/f64 tensors with reverse-mode autodiff on a linear tape.

A ``Graph`` is an append-only tape of operation records. Ops append in
execution order, which is topological by construction, and ``backward``
walks the tape exactly once in reverse. Tensors flagged frozen
(``requires_grad=False``) never receive a gradient buffer; gradients flow
*through* frozen parameters but are never materialized *for* them.

All forwards are deterministic: the matmul backend pins its reduction
order and the remaining reductions are numpy's (fixed pairwise order).
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional

import numpy as np

from . import backend
from .errors import ContractError, ShapeError

_ids = itertools.count()

GELU_TANH_COEFF = 0.7978845608028654  # sqrt(2/pi)
GELU_CUBIC_COEFF = 0.044715


class Tensor:
    """N-dimensional value, optionally tracked by the active graph."""

    __slots__ = ("data", "grad", "requires_grad", "tid")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            if arr.dtype != dtype:
                arr = arr.astype(dtype)
        elif arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.tid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    """One tape entry: the op kind, its inputs, its output, and a backward
    closure mapping the output gradient to per-input gradients."""

    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op: str, inputs: tuple, out: Tensor, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


_ACTIVE: list["Graph"] = []


class Graph:
    """Append-only tape; use as a context manager around the forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False


def _record(op, inputs, out_data, backward):
    """Create the output tensor, taping the op if gradients can flow."""
    graph = _ACTIVE[-1] if _ACTIVE else None
    needs = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        graph.nodes.append(Node(op, inputs, out, backward))
    return out


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(graph: Graph, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from ``loss``; returns {leaf node_id: gradient array}.

    Only leaves with requires_grad appear; their ``.grad`` buffers are set
    to the same arrays. Frozen leaves are absent by construction.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.tid: np.ones_like(loss.data)}
    produced = {node.out.tid for node in graph.nodes}
    leaves: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(node.out.tid, None)
        if g is None:
            continue
        input_grads = node.backward(g)
        for t, ig in zip(node.inputs, input_grads):
            if ig is None or not t.requires_grad:
                continue
            if t.tid in grads:
                grads[t.tid] = grads[t.tid] + ig
            else:
                grads[t.tid] = ig
            if t.tid not in produced:
                leaves[t.tid] = t
    if loss.tid not in produced:
        grads.pop(loss.tid, None)
    for tid, t in leaves.items():
        t.grad = grads[tid]
    return {tid: grads[tid] for tid in leaves}


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), out, back)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), out, back)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), out, back)


def scale(a, s: float):
    a = _as_tensor(a)
    s = a.data.dtype.type(s)
    out = a.data * s

    def back(g):
        return (g * s,)

    return _record("scale", (a,), out, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; see backend.matmul for the supported shape forms."""
    if a.shape[-1] != b.shape[0 if b.data.ndim == 2 else -2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = backend.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = backend.matmul(g, np.swapaxes(b.data, -1, -2))
            ga = _unbroadcast(ga, a.shape) if ga.shape != a.data.shape else ga
        if b.requires_grad:
            if b.data.ndim == 2 and g.ndim > 2:
                k = a.shape[-1]
                gb = backend.matmul(a.data.reshape(-1, k).T, g.reshape(-1, g.shape[-1]))
            else:
                gb = backend.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _record("matmul", (a, b), out, back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def back(g):
        return (g.reshape(a.data.shape),)

    return _record("reshape", (a,), out, back)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def back(g):
        return (g.transpose(inv),)

    return _record("transpose", (a,), out, back)


def sum_axis(a: Tensor, axis, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record("sum", (a,), out, back)


def mean_axis(a: Tensor, axis, keepdims=False) -> Tensor:
    n = a.data.shape[axis]
    return scale(sum_axis(a, axis, keepdims), 1.0 / n)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()

    def back(g):
        return (_unbroadcast(g, a.shape),)

    return _record("broadcast", (a,), out, back)


# ---------------------------------------------------------------------------
# nonlinearities and norms


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - y * y),)

    return _record("tanh", (a,), y, back)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation gelu: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    c = x.dtype.type(GELU_TANH_COEFF)
    k = x.dtype.type(GELU_CUBIC_COEFF)
    t = np.tanh(c * (x + k * x * x * x))
    y = 0.5 * x * (1.0 + t)

    def back(g):
        d_inner = c * (1.0 + 3.0 * k * x * x)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        return (g * dy,)

    return _record("gelu", (a,), y, back)


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = 1.0 / (1.0 + np.exp(-x))
    y = x * s

    def back(g):
        return (g * (s + y * (1.0 - s)),)

    return _record("silu", (a,), y, back)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax along the last axis, max-shifted for stability."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record("softmax", (a,), y, back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Standardize the last axis with population variance, then affine."""
    if eps < 0:
        raise ContractError("layer_norm eps must be >= 0")
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def back(g):
        dxhat = g * gain.data
        gx = None
        if x.requires_grad:
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gbias = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    return _record("layer_norm", (x, gain, bias), out, back)


def rms_norm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gain along the last axis."""
    if eps < 0:
        raise ContractError("rms_norm eps must be >= 0")
    d = x.data.shape[-1]
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + x.data.dtype.type(eps))
    xhat = x.data * inv
    out = xhat * gain.data

    def back(g):
        du = g * gain.data
        gx = None
        if x.requires_grad:
            dot = (du * x.data).mean(axis=-1, keepdims=True)
            gx = inv * du - (inv ** 3) * x.data * dot
        ggain = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        return gx, ggain

    return _record("rms_norm", (x, gain), out, back)


# ---------------------------------------------------------------------------
# indexing


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    out = table.data[ids]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _record("embedding", (table,), out, back)


def take_positions(x: Tensor, positions: np.ndarray) -> Tensor:
    """out[i, :] = x[i, positions[i], :] for a (b, s, d) input."""
    b = x.data.shape[0]
    rows = np.arange(b)
    out = x.data[rows, positions]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, positions), g)
        return (gx,)

    return _record("take_positions", (x,), out, back)


def repeat_kv(x: Tensor, group: int) -> Tensor:
    """Expand (b, kv_heads, s, hd) to (b, kv_heads*group, s, hd)."""
    out = np.repeat(x.data, group, axis=1)

    def back(g):
        b, _, s, hd = x.data.shape
        return (g.reshape(b, x.data.shape[1], group, s, hd).sum(axis=2),)

    return _record("repeat_kv", (x,), out, back)


def rope(x: Tensor, positions: np.ndarray, theta: float) -> Tensor:
    """Rotary position transform on (b, h, s, head_dim), adjacent pairs.

    Pair i of a vector at position p is rotated by angle
    p * theta^(-2i/head_dim). Parameter-free and norm-preserving.
    """
    hd = x.data.shape[-1]
    if hd % 2:
        raise ContractError(f"rope needs an even head_dim, got {hd}")
    dt = x.data.dtype
    half = hd // 2
    freqs = theta ** (-2.0 * np.arange(half) / hd)
    ang = positions[:, None].astype(np.float64) * freqs[None, :]
    cos = np.cos(ang).astype(dt)[None, None]  # (1,1,s,half)
    sin = np.sin(ang).astype(dt)[None, None]

    def rotate(v, cos_, sin_):
        ve = v[..., 0::2]
        vo = v[..., 1::2]
        out = np.empty_like(v)
        out[..., 0::2] = ve * cos_ - vo * sin_
        out[..., 1::2] = ve * sin_ + vo * cos_
        return out

    out = rotate(x.data, cos, sin)

    def back(g):
        # inverse rotation = rotation by the negated angle
        return (rotate(g, cos, -sin),)

    return _record("rope", (x,), out, back)


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax over non-ignored rows of (n, C) logits."""
    x = logits.data
    if x.ndim != 2:
        raise ContractError(f"cross_entropy expects (n, C) logits, got {x.shape}")
    targets = np.asarray(targets)
    if ignore_index is not None:
        kept = targets != ignore_index
    else:
        kept = np.ones(targets.shape, dtype=bool)
    n_kept = int(kept.sum())
    if n_kept == 0:
        raise ContractError("cross_entropy: every row is ignored")
    safe_t = np.where(kept, targets, 0)
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(x.shape[0])
    picked = logp[rows, safe_t]
    loss = -(picked * kept).sum(dtype=x.dtype) / x.dtype.type(n_kept)

    def back(g):
        p = np.exp(logp)
        p[rows, safe_t] -= 1.0
        p *= (kept.astype(x.dtype) / x.dtype.type(n_kept))[:, None]
        return (p * g,)

    return _record("cross_entropy", (logits,), np.asarray(loss), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; caller gates on training mode."""
    if p <= 0.0:
        return x
    if p >= 1.0:
        raise ContractError("dropout probability must be < 1")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale_ = x.data.dtype.type(1.0 / (1.0 - p))
    out = x.data * keep * scale_

    def back(g):
        return (g * keep * scale_,)

    return _record("dropout", (x,), out, back)
