"""A small tape-based reverse-mode autodiff over numpy arrays.

Only what the scoring model needs: dense maps, row gathers, segment
reductions over graph nodes, a handful of activations, dropout and Adam.
Shapes are explicit; the only broadcast is the bias add.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications; use as a context manager."""

    def __init__(self) -> None:
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _active().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _active()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.records)


_local = threading.local()


def _active() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Tape | None:
    stack = _active()
    return stack[-1] if stack else None


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    need = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=need)
    tape = current_tape()
    if need and tape is not None:
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _make(_product(A, B), (a, b), lambda g: (g @ B.T, A.T @ g))


def _product(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # BLAS rounds a row differently depending on its position in A unless the output width
    # is a multiple of 4; zero-padding B keeps forward passes exactly atom-order invariant
    extra = -B.shape[1] % 4
    if not extra:
        return A @ B
    return (A @ np.pad(B, ((0, 0), (0, extra))))[:, :B.shape[1]]


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x`` of shape (n, d) plus ``b`` of shape (d,) on every row."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ValueError(f"add_bias: shapes {x.shape} and {b.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), backward)


def _check_segments(x: Tensor, seg: np.ndarray, n_seg: int) -> np.ndarray:
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape != (x.shape[0],):
        raise ValueError(f"segment ids of shape {seg.shape} for {x.shape[0]} rows")
    if seg.size and (seg.min() < 0 or seg.max() >= n_seg):
        raise ValueError("segment id out of range")
    return seg


def _accumulate(values: np.ndarray, seg: np.ndarray, n_seg: int) -> np.ndarray:
    # float64 accumulation keeps float32 sums independent of row order
    out = np.zeros((n_seg,) + values.shape[1:], dtype=np.float64)
    np.add.at(out, seg, values)
    return out.astype(values.dtype, copy=False)


def segment_sum(x: Tensor, seg: np.ndarray, n_seg: int) -> Tensor:
    seg = _check_segments(x, seg, n_seg)
    return _make(_accumulate(x.data, seg, n_seg), (x,), lambda g: (g[seg],))


def segment_max(x: Tensor, seg: np.ndarray, n_seg: int) -> Tensor:
    """Per-segment column max; empty segments give 0. Gradient goes to the first maximiser."""
    seg = _check_segments(x, seg, n_seg)
    X = x.data
    out = np.full((n_seg,) + X.shape[1:], -np.inf, dtype=X.dtype)
    np.maximum.at(out, seg, X)
    empty = np.isneginf(out)
    out[empty] = 0
    # winner row per (segment, column): first row attaining the max
    none = np.iinfo(np.int64).max
    winner = np.full(out.shape, none, dtype=np.int64)
    rows, cols = np.nonzero(X == out[seg])
    np.minimum.at(winner, (seg[rows], cols), rows)
    winner[winner == none] = -1

    def backward(g):
        gx = np.zeros_like(X)
        valid = winner >= 0
        segs, cols = np.nonzero(valid)
        gx[winner[segs, cols], cols] += g[segs, cols]
        return (gx,)

    return _make(out, (x,), backward)


def segment_softmax(x: Tensor, seg: np.ndarray, n_seg: int) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    seg = _check_segments(x, seg, n_seg)
    X = x.data
    if X.shape[0] == 0:
        return _make(X.copy(), (x,), lambda g: (g,))
    mx = np.full((n_seg,) + X.shape[1:], -np.inf, dtype=X.dtype)
    np.maximum.at(mx, seg, X)
    e = np.exp(X - mx[seg])
    y = e / _accumulate(e, seg, n_seg)[seg]

    def backward(g):
        s = _accumulate(g * y, seg, n_seg)
        return (y * (g - s[seg]),)

    return _make(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    X = x.data
    return _make(np.maximum(X, 0), (x,), lambda g: (g * (X > 0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    X = x.data
    s = X.dtype.type(slope)
    return _make(np.where(X > 0, X, s * X), (x,), lambda g: (np.where(X > 0, g, s * g),))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    X = x.data
    a = X.dtype.type(alpha)
    neg = a * np.expm1(np.minimum(X, 0))
    out = np.where(X > 0, X, neg)
    return _make(out, (x,), lambda g: (np.where(X > 0, g, g * (neg + a)),))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with a single learned slope (shape (1,))."""
    if slope.shape != (1,):
        raise ValueError("prelu slope must have shape (1,)")
    X, a = x.data, slope.data[0]
    out = np.where(X > 0, X, a * X)

    def backward(g):
        return np.where(X > 0, g, a * g), np.array([np.sum(np.where(X > 0, 0, X) * g)], dtype=g.dtype)

    return _make(out, (x, slope), backward)


def sigmoid(x: Tensor) -> Tensor:
    X = x.data
    y = np.empty_like(X)
    pos = X >= 0
    y[pos] = 1 / (1 + np.exp(-X[pos]))
    ex = np.exp(X[~pos])
    y[~pos] = ex / (1 + ex)
    return _make(y, (x,), lambda g: (g * y * (1 - y),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflow."""
    X = x.data
    out = np.maximum(X, 0) + np.log1p(np.exp(-np.abs(X)))

    def backward(g):
        return (g * _stable_sigmoid(X),)

    return _make(out, (x,), backward)


def _stable_sigmoid(X: np.ndarray) -> np.ndarray:
    return np.where(X >= 0, 1 / (1 + np.exp(-np.abs(X))), np.exp(-np.abs(X)) / (1 + np.exp(-np.abs(X))))


def log(x: Tensor) -> Tensor:
    X = x.data
    return _make(np.log(X), (x,), lambda g: (g / X,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


def square(x: Tensor) -> Tensor:
    X = x.data
    return _make(X * X, (x,), lambda g: (2 * g * X,))


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a (1,) tensor."""
    shape = x.shape
    return _make(np.array([x.data.sum()], dtype=x.dtype), (x,), lambda g: (np.full(shape, g[0], dtype=g.dtype),))


def mean(x: Tensor) -> Tensor:
    n = max(x.data.size, 1)
    return scale(total(x), 1.0 / n)


def head_dot(x: Tensor, a: Tensor, heads: int) -> Tensor:
    """Per-head inner product: out[n, h] = sum_k x[n, h*d + k] * a[h*d + k]."""
    n, width = x.shape
    if a.shape != (width,) or width % heads:
        raise ValueError(f"head_dot: x {x.shape}, a {a.shape}, heads {heads}")
    d = width // heads
    X, A = x.data, a.data
    out = (X * A).reshape(n, heads, d).sum(axis=2)

    def backward(g):
        ge = np.repeat(g, d, axis=1)
        return ge * A, (ge * X).sum(axis=0)

    return _make(out, (x, a), backward)


def head_scale(x: Tensor, w: Tensor) -> Tensor:
    """Scale each head block of ``x`` (n, H*d) by ``w`` (n, H)."""
    n, width = x.shape
    heads = w.shape[1]
    if w.shape[0] != n or width % heads:
        raise ValueError(f"head_scale: x {x.shape}, w {w.shape}")
    d = width // heads
    X, W = x.data, w.data
    we = np.repeat(W, d, axis=1)

    def backward(g):
        return g * we, (g * X).reshape(n, heads, d).sum(axis=2)

    return _make(X * we, (x, w), backward)


# ---------------------------------------------------------------------------
# dropout


class DropoutRNG:
    """Counter-based mask source: each mask is a pure function of (seed, step, site).

    ``site`` counts dropout applications within one forward pass and is
    reset by :meth:`start`.
    """

    def __init__(self, seed: int, step: int = 0):
        self.seed = int(seed)
        self.step = int(step)
        self._site = 0

    def start(self, step: int) -> "DropoutRNG":
        self.step = int(step)
        self._site = 0
        return self

    def keep_mask(self, shape, rate: float) -> np.ndarray:
        bitgen = np.random.Philox(key=np.array([self.seed & 0xFFFFFFFFFFFFFFFF, 0x5EED], dtype=np.uint64),
                                  counter=np.array([self.step, self._site, 0, 0], dtype=np.uint64))
        self._site += 1
        return np.random.Generator(bitgen).random(shape) >= rate


def dropout(x: Tensor, rate: float, rng: DropoutRNG | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None (eval mode) or rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None or rate == 0.0:
        return x
    keep = rng.keep_mask(x.shape, rate)
    factor = (keep / (1.0 - rate)).astype(x.dtype)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# gradients


def gradients(loss: Tensor, params: Sequence[Tensor], tape: Tape) -> list[np.ndarray]:
    """Reverse sweep over ``tape`` from the scalar ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    on_tape = {id(t) for rec in tape.records for t in rec.inputs}
    for p in params:
        if id(p) not in on_tape:
            raise ValueError(f"parameter {p.name or p.shape} is not on the tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return [grads.get(id(p), np.zeros_like(p.data)).astype(p.dtype, copy=False) for p in params]


@contextmanager
def no_tape():
    """Temporarily hide active tapes (pure inference)."""
    stack = _active()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != np.shape(g) or p.shape != m.shape:
            raise ValueError(f"adam_step: shape mismatch for {p.name or p.shape}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.dtype, copy=False)
    return state
