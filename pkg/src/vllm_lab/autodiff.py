"""Dense float64 tensor algebra with tape-based reverse-mode autodiff.

Tensors store a flat row-major float64 array plus an explicit shape tuple.
There are no views or strides: every operation copies. Non-finite values are
rejected eagerly at construction time so NaNs can never propagate silently.

Gradients are recorded on an explicit :class:`GradTape`. Operations append
nodes in execution order, which is already a topological order, so the
backward pass is a single reversed sweep that visits each node exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class GradError(RuntimeError):
    pass


_TAPE: "GradTape | None" = None


class Tensor:
    __slots__ = ("shape", "data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"dimensions must be positive, got {arr.shape}")
        self.shape: tuple[int, ...] = arr.shape
        self.data: np.ndarray = arr.ravel().copy()
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))

    @classmethod
    def from_flat(cls, data: np.ndarray, shape: tuple[int, ...],
                  requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(data, dtype=np.float64).ravel()
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ShapeError(f"shape {shape} does not match {arr.size} values")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        t.shape = tuple(shape)
        t.data = arr.copy()
        t.requires_grad = requires_grad
        t.grad = None
        return t

    def view(self) -> np.ndarray:
        """Shaped read view of the flat storage (no copy)."""
        return self.data.reshape(self.shape)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data[0])

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other if isinstance(other, Tensor) else Tensor(other))

    def __sub__(self, other):
        return sub(self, other if isinstance(other, Tensor) else Tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class TapeNode:
    out: Tensor
    inputs: tuple
    backward_fn: object  # (g_out shaped) -> tuple of shaped grads (None allowed)


@dataclass
class GradTape:
    nodes: list = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "GradTape":
        global _TAPE
        if _TAPE is not None:
            raise TapeError("a tape is already active")
        _TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _TAPE
        _TAPE = None

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: GradTape) -> None:
    """Populate .grad on every tensor reachable from ``loss`` on ``tape``."""
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.data.size != 1:
        raise GradError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones(1, dtype=np.float64)
    for node in reversed(tape.nodes):
        g_out = node.out.grad
        if g_out is None:
            continue
        grads = node.backward_fn(g_out.reshape(node.out.shape))
        for inp, g in zip(node.inputs, grads):
            if g is None:
                continue
            if inp.grad is None:
                inp.grad = np.zeros(inp.data.size, dtype=np.float64)
            inp.grad += np.asarray(g, dtype=np.float64).ravel()
    tape.nodes.clear()
    tape.consumed = True


def _result(values: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    out = Tensor(values)
    if _TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.nodes.append(TapeNode(out, inputs, backward_fn))
    return out


# ---------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.view(), b.view()
    if a.shape == b.shape:
        def bwd(g):
            return g, g
        return _result(av + bv, (a, b), bwd)
    if b.shape == a.shape[-1:]:
        # trailing-dimension bias addition
        lead = tuple(range(len(a.shape) - 1))
        def bwd(g):
            return g, g.sum(axis=lead) if lead else g
        return _result(av + bv, (a, b), bwd)
    if not b.requires_grad:
        try:
            if np.broadcast_shapes(a.shape, b.shape) == a.shape:
                def bwd(g):
                    return g, None
                return _result(av + bv, (a, b), bwd)
        except ValueError:
            pass
    raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
    def bwd(g):
        return g, -g
    return _result(a.view() - b.view(), (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    def bwd(g):
        return (g * s,)
    return _result(a.view() * s, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    av, bv = a.view(), b.view()
    def bwd(g):
        return g * bv, g * av
    return _result(av * bv, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D x 2-D, stacked [..., m, k] x [k, n], or equal
    leading batch dims on both sides."""
    if len(a.shape) < 2 or len(b.shape) < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    if len(b.shape) > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}")
    av, bv = a.view(), b.view()
    out = av @ bv
    if len(b.shape) == 2:
        def bwd(g):
            ga = g @ bv.T
            gb = av.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[-1])
            return ga, gb
    else:
        def bwd(g):
            ga = g @ bv.swapaxes(-1, -2)
            gb = av.swapaxes(-1, -2) @ g
            return ga, gb
    return _result(out, (a, b), bwd)


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    def bwd(g):
        return (g.transpose(inverse),)
    return _result(a.view().transpose(axes), (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}")
    def bwd(g):
        return (g.reshape(a.shape),)
    return _result(a.view().reshape(shape), (a,), bwd)


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"cannot concat shapes {a.shape} and {b.shape}")
    na = a.shape[-1]
    def bwd(g):
        return g[..., :na], g[..., na:]
    return _result(np.concatenate([a.view(), b.view()], axis=-1), (a, b), bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows of a 2-D tensor by integer index; backward scatter-adds."""
    if len(table.shape) != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows needs a flat index list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    tv = table.view()
    def bwd(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx, g)
        return (gt,)
    return _result(tv[idx], (table,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        return (np.full(a.shape, float(g), dtype=np.float64),)
    return _result(np.asarray(a.view().sum()), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % len(a.shape)
    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _result(a.view().sum(axis=axis), (a,), bwd)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    return scale(sum_axis(a, axis), 1.0 / a.shape[axis % len(a.shape)])


# ------------------------------------------------------------ nonlinearities

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.view())
    def bwd(g):
        return (g * (1.0 - y * y),)
    return _result(y, (a,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU; smooth everywhere (finite differences behave)."""
    x = a.view()
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)
    return _result(y, (a,), bwd)


def softmax_lastdim(a: Tensor) -> Tensor:
    if a.shape[-1] < 1:
        raise ShapeError("softmax needs a last dimension of length >= 1")
    x = a.view()
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)
    return _result(y, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = a.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError("layer_norm gain/bias must match the last dimension")
    x = a.view()
    mu = x.mean(axis=-1, keepdims=True)
    xm = x - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xm * inv
    gv, bv = gain.view(), bias.view()
    def bwd(g):
        dxhat = g * gv
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(len(a.shape) - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g
        return dx, dgain, dbias
    return _result(xhat * gv + bv, (a, gain, bias), bwd)


# ------------------------------------------------------------------- losses

def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax probability of integer targets.

    ``logits`` is [n x V]; each target must lie in [0, V).
    """
    if len(logits.shape) != 2:
        raise ShapeError(f"cross_entropy needs 2-D logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if t.shape != (n,):
        raise ShapeError(f"expected {n} targets, got shape {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= v):
        bad = t[(t < 0) | (t >= v)][0]
        raise IndexError(f"target index {bad} outside [0, {v})")
    x = logits.view()
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    loss = float(np.mean(lse - x[np.arange(n), t]))
    def bwd(g):
        p = np.exp(x - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), t] -= 1.0
        return (float(g) * p / n,)
    return _result(np.asarray(loss), (logits,), bwd)


# ------------------------------------------------------------------ conv2d

def _im2col_indices(c: int, h: int, w: int, kh: int, kw: int,
                    stride: int, pad: int):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    i0 = np.repeat(np.arange(kh), kw)
    i0 = np.tile(i0, c)
    i1 = stride * np.repeat(np.arange(ho), wo)
    j0 = np.tile(np.arange(kw), kh * c)
    j1 = stride * np.tile(np.arange(wo), ho)
    rows = i0.reshape(-1, 1) + i1.reshape(1, -1)
    cols = j0.reshape(-1, 1) + j1.reshape(1, -1)
    chan = np.repeat(np.arange(c), kh * kw).reshape(-1, 1)
    return rows, cols, chan, ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution via im2col. x is [B,C,H,W] or [C,H,W]; w is [O,C,kh,kw]."""
    squeeze = len(x.shape) == 3
    xv = x.view()[None] if squeeze else x.view()
    if xv.ndim != 4:
        raise ShapeError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    bsz, c, h, wdt = xv.shape
    o, wc, kh, kw = w.shape
    if wc != c:
        raise ShapeError(f"conv2d channels disagree: input {c}, kernel {wc}")
    rows, cols, chan, ho, wo = _im2col_indices(c, h, wdt, kh, kw, stride, pad)
    xp = np.pad(xv, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    colsx = xp[:, chan, rows, cols]                      # [B, C*kh*kw, Ho*Wo]
    w2 = w.view().reshape(o, -1)
    y = np.matmul(w2, colsx)                             # [B, O, Ho*Wo]
    if b is not None:
        y = y + b.view().reshape(1, o, 1)
    y = y.reshape(bsz, o, ho, wo)
    out_shape = (o, ho, wo) if squeeze else (bsz, o, ho, wo)

    def bwd(g):
        g2 = g.reshape(bsz, o, ho * wo)
        dcols = np.matmul(w2.T, g2)
        dxp = np.zeros_like(xp)
        for bi in range(bsz):
            np.add.at(dxp[bi], (chan, rows, cols), dcols[bi])
        dx = dxp[:, :, pad:pad + h, pad:pad + wdt] if pad else dxp
        dw = np.einsum("bop,bkp->ok", g2, colsx).reshape(w.shape)
        db = g2.sum(axis=(0, 2)) if b is not None else None
        dx = dx[0] if squeeze else dx
        grads = [dx, dw]
        if b is not None:
            grads.append(db)
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _result(y.reshape(out_shape), inputs, bwd)


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    step: int
    first_moment: list
    second_moment: list
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01


def init_optimizer(params: list[Tensor], learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8, weight_decay: float = 0.01) -> OptimizerState:
    return OptimizerState(
        step=0,
        first_moment=[np.zeros(p.data.size, dtype=np.float64) for p in params],
        second_moment=[np.zeros(p.data.size, dtype=np.float64) for p in params],
        learning_rate=learning_rate, beta1=beta1, beta2=beta2,
        epsilon=epsilon, weight_decay=weight_decay)


def adamw_step(params: list[Tensor], state: OptimizerState) -> None:
    """One AdamW update: decoupled weight decay first, then bias-corrected
    moment update. Gradients are cleared afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise GradError(f"parameter {i} has no gradient")
        if state.first_moment[i].size != p.data.size:
            raise ShapeError(f"optimizer moment {i} does not match parameter size")
    t = state.step + 1
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, p in enumerate(params):
        g = p.grad
        p.data -= lr * state.weight_decay * p.data
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.grad = None
    state.step = t


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------- grad checking

@dataclass
class FiniteDiffResult:
    rel_error: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max())


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> FiniteDiffResult:
    """Compare the tape gradient of scalar-valued ``f`` at ``x`` against
    central finite differences, element by element."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    was_required, saved_grad = x.requires_grad, x.grad
    x.requires_grad, x.grad = True, None
    with GradTape() as tape:
        loss = f(x)
    backward(loss, tape)
    analytic = x.grad.copy() if x.grad is not None else np.zeros(x.data.size)
    x.requires_grad, x.grad = was_required, saved_grad

    numeric = np.zeros(x.data.size, dtype=np.float64)
    for i in range(x.data.size):
        orig = x.data[i]
        x.data[i] = orig + h
        fp = f(x).item()
        x.data[i] = orig - h
        fm = f(x).item()
        x.data[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return FiniteDiffResult(np.abs(analytic - numeric) / denom, analytic, numeric)
