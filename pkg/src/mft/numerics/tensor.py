"""Dense tensors with tape-based reverse-mode differentiation.

Storage is float32 by default; reductions accumulate in float64. Every op
checks its output for NaN/Inf and raises :class:`NonFiniteError`.

Recording happens only while a :class:`Tape` is active and at least one input
requires grad. Nodes are appended in execution order, so walking the tape
backwards is a valid reverse topological order.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class TapeError(RuntimeError):
    pass


_state = threading.local()


def _active_tape() -> "Tape | None":
    if getattr(_state, "no_grad", 0):
        return None
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


@contextmanager
def no_grad():
    _state.no_grad = getattr(_state, "no_grad", 0) + 1
    try:
        yield
    finally:
        _state.no_grad -= 1


def _check_finite(arr: np.ndarray, what: str) -> None:
    # any NaN/Inf element makes the sum non-finite
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records differentiable ops executed inside its ``with`` block."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        if not hasattr(_state, "tapes"):
            _state.tapes = []
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
        """Propagate d(loss) back through the tape.

        Leaves that require grad get ``.grad`` set (accumulated on fan-out).
        If ``params`` is given every one of them receives a gradient array,
        zeros when it did not influence the loss.
        """
        if loss.data.size != 1:
            raise TapeError("backward needs a scalar loss")
        if loss._node is None or loss._node not in self.nodes:
            raise TapeError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._node is None:
                    leaves[key] = t
        for key, t in leaves.items():
            t.grad = grads[key].astype(t.data.dtype, copy=False)
        if params is not None:
            for p in params:
                if id(p) not in leaves:
                    p.grad = np.zeros_like(p.data)
        return {k: grads[k] for k in leaves}


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    _check_finite(data, what)
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(out, inputs, backward)
        out._node = node
        tape.record(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, "mul")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "power")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    dt = x.dtype.type
    x2 = x * x
    t = np.tanh(dt(_GELU_C) * x * (dt(1.0) + dt(0.044715) * x2))
    out = dt(0.5) * x * (dt(1.0) + t)

    def backward(g):
        d_inner = dt(_GELU_C) * (dt(1.0) + dt(3 * 0.044715) * x2)
        return (g * (dt(0.5) * (dt(1.0) + t) + dt(0.5) * x * (dt(1.0) - t * t) * d_inner),)

    return _make(out, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# shape / linear algebra


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward, "matmul")


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    shape = weight.shape

    def backward(g):
        gw = np.zeros(shape, dtype=g.dtype)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (gw,)

    return _make(weight.data[ids], (weight,), backward, "embedding")


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(a.dtype),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# fused ops


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    rstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.astype(xd.dtype)) * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        d = xd.shape[-1]
        flat = (-1, d)
        ggain = (g * xhat).reshape(flat).sum(axis=0, dtype=np.float64).astype(xd.dtype)
        gbias = g.reshape(flat).sum(axis=0, dtype=np.float64).astype(xd.dtype)
        gx_hat = g * gain.data
        m1 = gx_hat.mean(axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
        gx = (gx_hat - m1 - xhat * m2) * rstd
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), backward, "layer_norm")


def _softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True, dtype=np.float64).astype(z.dtype)
    return z


_CAUSAL_CACHE: dict[tuple[int, type], np.ndarray] = {}


def _causal_bias(t: int, dtype) -> np.ndarray:
    key = (t, np.dtype(dtype).type)
    bias = _CAUSAL_CACHE.get(key)
    if bias is None:
        bias = np.where(np.triu(np.ones((t, t), dtype=bool), k=1), -np.inf, 0.0).astype(dtype)
        _CAUSAL_CACHE[key] = bias
    return bias


def softmax(x, axis: int = -1, causal: bool = False):
    """Max-stabilized softmax.

    Accepts a Tensor (differentiable) or an array-like (returns ndarray).
    ``causal=True`` masks the upper triangle of the last two axes, as used
    for attention scores.
    """
    raw = not isinstance(x, Tensor)
    z = np.array(x, dtype=np.float64) if raw else x.data
    _check_finite(z, "softmax input")
    if causal:
        z = z + _causal_bias(z.shape[-1], z.dtype)
    out = _softmax_np(z, axis)
    if raw:
        return out

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def cross_entropy_soft(logits: Tensor, target, weight=None, check_target: bool = True) -> Tensor:
    """Weighted mean of ``-sum(target * log_softmax(logits))`` over rows.

    ``logits`` and ``target`` share shape ``[..., vocab]``; ``weight`` has the
    leading shape and defaults to ones. Computed in float64; the gradient
    w.r.t. logits is ``weight * (softmax - target) / sum(weight)``.
    """
    logits = _as_tensor(logits)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target)
    if tgt.shape != logits.shape:
        raise ValueError(f"target shape {tgt.shape} != logits shape {logits.shape}")
    if check_target:
        if (tgt < 0).any() or np.abs(tgt.sum(axis=-1, dtype=np.float64) - 1.0).max() > 1e-5:
            raise ValueError("target rows must be probability distributions (sum to 1 within 1e-5)")
    lead = logits.shape[:-1]
    w = np.ones(lead, dtype=np.float64) if weight is None else np.asarray(weight, dtype=np.float64)
    if w.shape != lead:
        raise ValueError(f"weight shape {w.shape} != {lead}")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    _check_finite(logits.data, "cross_entropy_soft logits")
    lsm = log_softmax_np(logits.data.astype(np.float64))
    t64 = tgt.astype(np.float64)
    per_row = -(t64 * lsm).sum(axis=-1)
    # the scalar stays in float64 so finite differences of the loss are meaningful
    loss = np.asarray((per_row * w).sum() / total)

    def backward(g):
        grad = (np.exp(lsm) - t64) * (w / total)[..., None] * float(g)
        return (grad.astype(logits.dtype),)

    return _make(loss, (logits,), backward, "cross_entropy_soft")
