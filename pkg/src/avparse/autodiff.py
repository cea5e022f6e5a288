"""Minimal reverse-mode autodiff over dense numpy arrays.

Only the primitives the model needs are provided. Each primitive records a
closure that maps the output gradient to input gradients; ``backward`` replays
the recorded ops in reverse topological order (the :class:`GradTape`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LEAKY_SLOPE = 0.2
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense array node in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_breaks", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._breaks: tuple[float, ...] = ()  # points where the op's derivative jumps
        self.name = name

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
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        GradTape.record(self).backward(grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, breaks: tuple[float, ...] = ()) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._breaks = breaks
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@dataclass
class GradTape:
    """Ordered record of the primitive ops that produced ``output``."""

    output: Tensor
    ops: list[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, output: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(output, order)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.output.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.output.data)
        grads: dict[int, np.ndarray] = {id(self.output): np.asarray(grad, dtype=self.output.dtype)}
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,), (0.0,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), (0.0,))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = np.minimum(x.data, 0)
    em1 = np.expm1(neg)
    out = np.where(x.data > 0, x.data, alpha * em1).astype(x.dtype)
    deriv = np.where(x.data > 0, 1.0, alpha * (em1 + 1.0)).astype(x.dtype)
    # C1 at zero, but the second derivative jumps, which biases central differences
    return _make(out, (x,), lambda g: (g * deriv,), (0.0,))


def nonlin_eps(x: Tensor) -> Tensor:
    """Node-update activation of the graph layer (ELU)."""
    return elu(x)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), (lo, hi))


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swap_last(x: Tensor) -> Tensor:
    return _make(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    return _make(np.moveaxis(x.data, src, dst), (x,), lambda g: (np.moveaxis(g, dst, src),))


def stack(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = list(xs)

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(xs))]

    return _make(np.stack([x.data for x in xs], axis=axis), xs, back)


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """x[..., index, ...] along ``axis`` (drops that axis)."""

    def back(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        sl = [slice(None)] * x.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return _make(np.take(x.data, index, axis=axis), (x,), back)


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_lastdim: leading dims differ {a.shape} vs {b.shape}")
    split = a.shape[-1]
    return _make(np.concatenate([a.data, b.data], axis=-1), (a, b),
                 lambda g: (g[..., :split], g[..., split:]))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, x.shape),))


# ---------------------------------------------------------------- reductions


def sum_axis(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(np.asarray(out), (x,), back)


def mean_pool_axis(x: Tensor, axis, keepdims: bool = False) -> Tensor:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_axis(x, axis, keepdims), 1.0 / n)


def mean(x: Tensor) -> Tensor:
    return mean_pool_axis(x, tuple(range(x.ndim)))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} vs weight {w.shape}")
    out = matmul(x, w) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), w), (w.shape[1],))
    return out if b is None else add(out, b)


# ---------------------------------------------------------------- normalisation / attention


def softmax_masked(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` restricted to ``mask``; masked entries are exactly 0."""
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("softmax_masked: a row has no unmasked entries")
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    shifted = np.where(mask, x.data, neg_inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, shifted, 0)), 0).astype(x.dtype)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return softmax_masked(x, None, axis)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = LN_EPS) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (gx.astype(x.dtype),)

    out = _make(xhat.astype(x.dtype), (x,), back)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


@dataclass
class BatchNormState:
    """Running statistics for :func:`batch_norm_1d` (not trained by gradient)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def create(cls, features: int, dtype=np.float64) -> "BatchNormState":
        return cls(np.zeros(features, dtype=dtype), np.ones(features, dtype=dtype))


def batch_norm_1d(x: Tensor, state: BatchNormState, mode: str = "train",
                  gain: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Normalise rows of a 2-D input per feature; ``mode`` is ``train`` or ``eval``."""
    if x.ndim != 2:
        raise ShapeError("batch_norm_1d expects (rows, features)")
    if mode == "train":
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch_norm_1d: train mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        xc = x.data - mu
        var = (xc * xc).mean(axis=0)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mu).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var
                             + m * var * n / (n - 1)).astype(state.running_var.dtype)

        def back(g):
            gx = inv * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0))
            return (gx.astype(x.dtype),)

        out = _make(xhat.astype(x.dtype), (x,), back)
    elif mode == "eval":
        inv = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        out = mul(sub(x, state.running_mean.astype(x.dtype)), inv)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]
    straddled: int = 0  # differenced coordinates whose +-h evaluations sit on opposite sides of a kink

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= 1e-4


RELATIVE_FLOOR = 1e-3


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """max|a - n| / max(max|a|, max|n|, floor): max-norm relative error of one gradient array.

    Entry-wise ratios blow up on entries that are zero up to truncation error,
    so the whole array's largest entry sets the scale. ``floor`` covers arrays
    whose gradient vanishes identically (a shift inside a softmax), where both
    sides are rounding noise.
    """
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(floor, np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    return 0.0 if diff == 0 else float(diff / scale)


def kink_sides(output: Tensor) -> list[np.ndarray]:
    """Which side of each breakpoint every piecewise op's input lies on."""
    return [node._parents[0].data > b for node in GradTape.record(output).ops for b in node._breaks]


def check_gradients(f: Callable[..., Tensor], point, h: float = 1e-3, coords: int | None = None,
                    rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    ``point`` is an array or a dict of named arrays; ``f`` receives Tensors
    positionally (array) or by keyword (dict). Everything runs in float64.
    ``straddled`` counts coordinates whose two evaluations fall on opposite
    sides of a derivative jump; the difference is meaningless there.

    With ``coords`` set, only that many randomly chosen entries per array are
    differenced (the rest of ``numeric`` is NaN); the error is still scaled by
    the largest analytic entry of the whole array.
    """
    named = point if isinstance(point, dict) else {"x": point}
    arrays = {k: np.array(v, dtype=np.float64) for k, v in named.items()}

    def call(arrs, grad: bool):
        ts = {k: Tensor(v.copy(), requires_grad=grad) for k, v in arrs.items()}
        out = f(**ts) if isinstance(point, dict) else f(ts["x"])
        return out, ts

    out, ts = call(arrays, True)
    if out.data.size != 1:
        raise ShapeError("check_gradients: f must be scalar-valued")
    track = bool(kink_sides(out))  # skip graph building in the differences when there is nothing to watch
    out.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in ts.items()}

    numeric, straddled = {}, 0
    for k, base in arrays.items():
        num = np.full_like(base, np.nan)
        flat = base.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, coords, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = call(arrays, track)[0]
            flat[i] = orig - h
            fm = call(arrays, track)[0]
            flat[i] = orig
            num.reshape(-1)[i] = (fp.item() - fm.item()) / (2 * h)
            if track and any(not np.array_equal(a, b) for a, b in zip(kink_sides(fp), kink_sides(fm))):
                straddled += 1
        numeric[k] = num

    # arrays are judged against their own scale, but never below a fixed fraction of the largest gradient entry
    overall = max(np.abs(g).max(initial=0.0) for g in analytic.values())
    worst, worst_name = 0.0, ""
    for k in arrays:
        seen = ~np.isnan(numeric[k])
        floor = max(np.abs(analytic[k]).max(initial=0.0), RELATIVE_FLOOR * overall)
        err = rel_error(analytic[k][seen], numeric[k][seen], floor)
        if err > worst or not worst_name:
            worst, worst_name = err, k
    return GradCheckReport(worst, worst_name, analytic, numeric, straddled)
