"""Dense float64 arrays with reverse-mode differentiation and an Adam optimizer.

Operations executed while a Tape is active are recorded in execution order;
``backward`` replays the tape in reverse, accumulating gradients (summed
across fan-out) into every participating Value whose ``requires_grad`` is set.
Forward computation works with or without an active tape, so evaluation
carries no recording overhead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Value",
    "Tape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "elementwise",
    "relu",
    "tanh",
    "sigmoid",
    "softmax_rows",
    "softmax_segments",
    "concat",
    "slice_rows",
    "slice_cols",
    "gather_rows",
    "scatter_rows",
    "reshape",
    "sum_all",
    "sum_rows",
    "dropout",
    "cross_entropy",
    "AdamState",
    "init_adam",
    "adam_step",
    "zero_grads",
    "grad_check",
    "uniform_init",
]

_TAPE_STACK: list["Tape"] = []


class Value:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element Value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_value(other))

    def __radd__(self, other):
        return add(_as_value(other), self)

    def __sub__(self, other):
        return sub(self, _as_value(other))

    def __rsub__(self, other):
        return sub(_as_value(other), self)

    def __mul__(self, other):
        return mul(self, _as_value(other))

    def __rmul__(self, other):
        return mul(_as_value(other), self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


class Tape:
    """Execution-ordered record of operations for one reverse sweep."""

    __slots__ = ("_records",)

    def __init__(self):
        # each record: (output Value, input Values, backprop closure)
        self._records: list[tuple[Value, tuple[Value, ...], Callable[[], None]]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)


def _record(out: Value, inputs: tuple[Value, ...], backprop: Callable[[], None]) -> None:
    if _TAPE_STACK and out.requires_grad:
        _TAPE_STACK[-1]._records.append((out, inputs, backprop))


def backward(loss: Value, tape: Tape) -> None:
    """Reverse sweep: seed d(loss)/d(loss)=1 and accumulate into all grads.

    Gradient buffers of every Value touched by the tape are zeroed first, so
    repeated backward calls never leak stale gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for out, inputs, _ in tape._records:
        for v in (out, *inputs):
            if v.requires_grad:
                if v.grad is None:
                    v.grad = np.zeros_like(v.data)
                else:
                    v.grad.fill(0.0)
    loss.ensure_grad().fill(0.0)
    loss.grad += 1.0
    for _, _, backprop in reversed(tape._records):
        backprop()


def zero_grads(values: Sequence[Value]) -> None:
    for v in values:
        if v.grad is None:
            v.grad = np.zeros_like(v.data)
        else:
            v.grad.fill(0.0)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Value, b: Value) -> Value:
    out = Value(a.data + b.data, a.requires_grad or b.requires_grad)

    def backprop():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.data.shape)

    _record(out, (a, b), backprop)
    return out


def sub(a: Value, b: Value) -> Value:
    out = Value(a.data - b.data, a.requires_grad or b.requires_grad)

    def backprop():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.data.shape)

    _record(out, (a, b), backprop)
    return out


def mul(a: Value, b: Value) -> Value:
    out = Value(a.data * b.data, a.requires_grad or b.requires_grad)

    def backprop():
        if a.requires_grad:
            a.grad += _unbroadcast(b.data * out.grad, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(a.data * out.grad, b.data.shape)

    _record(out, (a, b), backprop)
    return out


def matmul(a: Value, b: Value) -> Value:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} @ {b.data.shape}")
    out = Value(a.data @ b.data, a.requires_grad or b.requires_grad)

    def backprop():
        if a.requires_grad:
            a.grad += out.grad @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ out.grad

    _record(out, (a, b), backprop)
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# kind -> (forward, local derivative as a function of (output, input))
_ELEMENTWISE: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda out, x: (x > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda out, x: 1.0 - out * out),
    "sigmoid": (_stable_sigmoid, lambda out, x: out * (1.0 - out)),
}


def elementwise(x: Value, kind: str) -> Value:
    try:
        fwd, deriv = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    out = Value(fwd(x.data), x.requires_grad)

    def backprop():
        x.grad += deriv(out.data, x.data) * out.grad

    _record(out, (x,), backprop)
    return out


def relu(x: Value) -> Value:
    return elementwise(x, "relu")


def tanh(x: Value) -> Value:
    return elementwise(x, "tanh")


def sigmoid(x: Value) -> Value:
    return elementwise(x, "sigmoid")


def softmax_rows(x: Value) -> Value:
    """Row-wise softmax with max subtraction; each output row sums to 1."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows needs a 2-D Value, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = Value(e / e.sum(axis=1, keepdims=True), x.requires_grad)

    def backprop():
        g = out.grad
        dot = (g * out.data).sum(axis=1, keepdims=True)
        x.grad += out.data * (g - dot)

    _record(out, (x,), backprop)
    return out


def softmax_segments(x: Value, segment_ids) -> Value:
    """Softmax over contiguous segments of a column/flat vector.

    ``segment_ids`` must be non-decreasing; entries sharing an id form one
    softmax group. Used for per-node attention normalization on edge lists.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    flat = x.data.reshape(-1)
    if ids.shape != flat.shape:
        raise ValueError(f"segment ids shape {ids.shape} does not match values {flat.shape}")
    if flat.size == 0:
        return Value(np.empty_like(x.data), x.requires_grad)
    if np.any(np.diff(ids) < 0):
        raise ValueError("segment ids must be non-decreasing")
    starts = np.flatnonzero(np.r_[True, np.diff(ids) != 0])
    seg_of = np.cumsum(np.r_[0, (np.diff(ids) != 0).astype(np.int64)])
    shifted = flat - np.maximum.reduceat(flat, starts)[seg_of]
    e = np.exp(shifted)
    w = e / np.add.reduceat(e, starts)[seg_of]
    out = Value(w.reshape(x.data.shape), x.requires_grad)

    def backprop():
        g = out.grad.reshape(-1)
        wf = out.data.reshape(-1)
        t = wf * g
        seg_dot = np.add.reduceat(t, starts)[seg_of]
        x.grad += (t - wf * seg_dot).reshape(x.data.shape)

    _record(out, (x,), backprop)
    return out


def concat(parts: Sequence[Value], axis: int = 0) -> Value:
    parts = list(parts)
    if not parts:
        raise ValueError("concat needs at least one part")
    base = parts[0].data.shape
    for p in parts[1:]:
        s = p.data.shape
        if len(s) != len(base) or any(
            s[d] != base[d] for d in range(len(base)) if d != axis
        ):
            raise ValueError(f"concat shape mismatch on non-concat axes: {base} vs {s}")
    out = Value(
        np.concatenate([p.data for p in parts], axis=axis),
        any(p.requires_grad for p in parts),
    )
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def backprop():
        g = out.grad
        index: list = [slice(None)] * g.ndim
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index[axis] = slice(start, stop)
                p.grad += g[tuple(index)]

    _record(out, tuple(parts), backprop)
    return out


def slice_rows(x: Value, start: int, stop: int) -> Value:
    out = Value(x.data[start:stop], x.requires_grad)

    def backprop():
        x.grad[start:stop] += out.grad

    _record(out, (x,), backprop)
    return out


def slice_cols(x: Value, start: int, stop: int) -> Value:
    out = Value(x.data[:, start:stop], x.requires_grad)

    def backprop():
        x.grad[:, start:stop] += out.grad

    _record(out, (x,), backprop)
    return out


def gather_rows(x: Value, indices) -> Value:
    idx = np.asarray(indices, dtype=np.int64)
    out = Value(x.data[idx], x.requires_grad)

    def backprop():
        np.add.at(x.grad, idx, out.grad)

    _record(out, (x,), backprop)
    return out


def scatter_rows(x: Value, indices, num_rows: int) -> Value:
    """out[i] = sum of x rows whose index maps to i (duplicates accumulate)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape[0] != x.data.shape[0]:
        raise ValueError(f"scatter needs one index per row: {idx.shape[0]} vs {x.data.shape[0]}")
    data = np.zeros((num_rows,) + x.data.shape[1:])
    np.add.at(data, idx, x.data)
    out = Value(data, x.requires_grad)

    def backprop():
        x.grad += out.grad[idx]

    _record(out, (x,), backprop)
    return out


def reshape(x: Value, shape) -> Value:
    out = Value(x.data.reshape(shape), x.requires_grad)

    def backprop():
        x.grad += out.grad.reshape(x.data.shape)

    _record(out, (x,), backprop)
    return out


def sum_all(x: Value) -> Value:
    out = Value(np.array([[x.data.sum()]]), x.requires_grad)

    def backprop():
        x.grad += out.grad[0, 0]

    _record(out, (x,), backprop)
    return out


def sum_rows(x: Value) -> Value:
    if x.data.ndim != 2:
        raise ValueError(f"sum_rows needs a 2-D Value, got shape {x.shape}")
    out = Value(x.data.sum(axis=1, keepdims=True), x.requires_grad)

    def backprop():
        x.grad += out.grad

    _record(out, (x,), backprop)
    return out


def dropout(x: Value, rate: float, training: bool, rng: np.random.Generator | None = None) -> Value:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Value(x.data * mask, x.requires_grad)

    def backprop():
        x.grad += mask * out.grad

    _record(out, (x,), backprop)
    return out


def cross_entropy(logits: Value, labels) -> Value:
    """Mean negative log-likelihood of integer class labels, one per row."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy needs 2-D logits, got shape {logits.shape}")
    y = np.asarray(labels, dtype=np.int64)
    m, c = logits.data.shape
    if y.shape != (m,):
        raise ValueError(f"expected {m} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Value(np.array([[-logp[np.arange(m), y].mean()]]), logits.requires_grad)

    def backprop():
        p = np.exp(logp)
        p[np.arange(m), y] -= 1.0
        logits.grad += (out.grad[0, 0] / m) * p

    _record(out, (logits,), backprop)
    return out


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(
    params: Sequence[Value],
    learning_rate: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        step=0,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: Sequence[Value], grads: Sequence[np.ndarray | None], state: AdamState) -> AdamState:
    """In-place Adam update with bias correction; None grads act as zeros."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("adam_step: params, grads and state buffers disagree in length")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"adam_step shape mismatch: param {p.data.shape}, grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state


def grad_check(
    loss_fn: Callable[[], Value],
    params: Sequence[Value],
    eps: float = 1e-6,
    coords_per_param: int = 4,
    rng: np.random.Generator | None = None,
    min_magnitude: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must be deterministic (dropout disabled). For each parameter a
    few coordinates are sampled; error is |analytic - numeric| over
    max(1e-8, |analytic| + |numeric|).

    Coordinates whose analytic gradient is below ``min_magnitude`` are skipped:
    there the central difference sits at the float64 roundoff floor and the
    relative error measures noise, not correctness. If no coordinate anywhere
    clears the floor, sampling falls back to unrestricted so the check never
    silently verifies nothing.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with Tape() as tape:
        loss = loss_fn()
        backward(loss, tape)
    analytic = [
        np.array(p.grad, copy=True) if p.grad is not None else np.zeros_like(p.data)
        for p in params
    ]
    any_eligible = any(np.abs(a).max(initial=0.0) >= min_magnitude for a in analytic)
    worst = 0.0
    for p, a in zip(params, analytic):
        a_flat = a.reshape(-1)
        if any_eligible:
            pool = np.flatnonzero(np.abs(a_flat) >= min_magnitude)
            if pool.size == 0:
                continue
        else:
            pool = np.arange(a_flat.size)
        coords = rng.choice(pool, size=min(coords_per_param, pool.size), replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = loss_fn().item()
            flat[c] = orig - eps
            f_minus = loss_fn().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(a_flat[c] - numeric) / max(1e-8, abs(a_flat[c]) + abs(numeric))
            worst = max(worst, err)
    return worst


def uniform_init(shape, bound: float, rng: np.random.Generator) -> Value:
    return Value(rng.uniform(-bound, bound, size=shape), requires_grad=True)
