"""Dense float64 tensors with a recording tape for reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations take an optional
:class:`Tape`; when one is supplied and any operand requires a gradient, the
application is recorded together with a vector-Jacobian closure. Calling
:func:`backward` replays the tape in reverse.

Gradient contributions arriving at the same tensor from several consumers are
summed in sorted order, so the result does not depend on the order in which
consumers were recorded.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArityError, ContractError, NumericError, ShapeError

DIV_EPS = 1e-8
LOG_FLOOR = 1e-10
CLAMP_LOW, CLAMP_HIGH = -1.0, 1.0
MUL_CONSTANTS = (-1.0, 0.1, 0.01, 0.5, 2.0)

_ids = itertools.count()


class Tensor:
    """An immutable float64 array plus a differentiability flag."""

    __slots__ = ("data", "requires_grad", "id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def leaf(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


VJP = Callable[[np.ndarray, tuple], Sequence]


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    vjp: VJP


class Tape:
    """Ordered record of primitive applications (single writer)."""

    def __init__(self):
        self.records: list[_Record] = []

    def __len__(self) -> int:
        return len(self.records)


def _summary(inputs: Iterable[Tensor]) -> str:
    parts = []
    for t in inputs:
        d = t.data
        if d.size:
            finite = d[np.isfinite(d)]
            lo = finite.min() if finite.size else float("nan")
            hi = finite.max() if finite.size else float("nan")
            parts.append(f"{d.shape} in [{lo:.3g}, {hi:.3g}]")
        else:
            parts.append(f"{d.shape}")
    return "; ".join(parts)


def _emit(kind: str, data: np.ndarray, inputs: tuple, vjp: VJP, tape: Tape | None) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(kind, _summary(inputs))
    rg = False
    for t in inputs:
        if t.requires_grad:
            rg = True
            break
    out = Tensor(data, requires_grad=rg)
    if tape is not None and rg:
        tape.records.append(_Record(out, inputs, vjp))
    return out


def _accumulate(parts: list) -> np.ndarray:
    if len(parts) == 1:
        return parts[0]
    stacked = np.sort(np.stack(parts), axis=0)
    total = stacked[0]
    for p in stacked[1:]:
        total = total + p
    return total


def backward(tape: Tape, output: Tensor, wrt: Sequence[Tensor] | None = None) -> dict:
    """Gradient of scalar ``output`` with respect to differentiable leaves.

    Returns a dict keyed by leaf tensor. Leaves listed in ``wrt`` that do not
    influence ``output`` get zero arrays. When ``wrt`` is omitted every
    differentiable leaf appearing on the tape is reported.
    """
    if output.shape != ():
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if wrt is None:
        produced = {r.out.id for r in tape.records}
        seen: dict[int, Tensor] = {}
        for r in tape.records:
            for t in r.inputs:
                if t.requires_grad and t.id not in produced and t.id not in seen:
                    seen[t.id] = t
        wrt = list(seen.values())
    depends = {t.id for t in wrt if t.requires_grad}
    relevant = []
    for r in tape.records:
        for t in r.inputs:
            if t.id in depends:
                depends.add(r.out.id)
                relevant.append(r)
                break
    pending: dict[int, list] = {}
    if output.id in depends:
        pending[output.id] = [np.ones((), dtype=np.float64)]
    for r in reversed(relevant):
        parts = pending.pop(r.out.id, None)
        if parts is None:
            continue
        g = _accumulate(parts)
        needs = tuple(t.id in depends for t in r.inputs)
        grads = r.vjp(g, needs)
        for t, gi, need in zip(r.inputs, grads, needs):
            if need and gi is not None:
                pending.setdefault(t.id, []).append(np.asarray(gi, dtype=np.float64))
    result = {}
    for t in wrt:
        parts = pending.get(t.id)
        result[t] = _accumulate(parts) if parts else np.zeros_like(t.data)
    return result


# ---------------------------------------------------------------------------
# broadcasting helpers (scalar-against-tensor only)


def _common_shape(kind: str, inputs: Sequence[Tensor]) -> tuple:
    shape: tuple = ()
    for t in inputs:
        s = t.shape
        if s == ():
            continue
        if shape == ():
            shape = s
        elif s != shape:
            raise ShapeError(f"{kind}: incompatible shapes {[x.shape for x in inputs]}")
    return shape


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


def _check_arity(kind: str, inputs: Sequence, n: int) -> None:
    if len(inputs) != n:
        raise ArityError(f"{kind} expects {n} inputs, got {len(inputs)}")


# ---------------------------------------------------------------------------
# graph-level primitives


def _add(kind, inputs, tape):
    _check_arity(kind, inputs, {"Add2": 2, "Add3": 3, "Add4": 4}[kind])
    _common_shape(kind, inputs)
    data = inputs[0].data
    for t in inputs[1:]:
        data = data + t.data
    shapes = [t.shape for t in inputs]

    def vjp(g, needs):
        return [_unbroadcast(g, s) if n else None for s, n in zip(shapes, needs)]

    return _emit(kind, data, tuple(inputs), vjp, tape)


def _mul(kind, inputs, tape):
    _check_arity(kind, inputs, {"Mul2": 2, "Mul3": 3}[kind])
    _common_shape(kind, inputs)
    with np.errstate(all="ignore"):
        data = inputs[0].data
        for t in inputs[1:]:
            data = data * t.data
    vals = [t.data for t in inputs]

    def vjp(g, needs):
        out = []
        for i, n in enumerate(needs):
            if not n:
                out.append(None)
                continue
            prod = g
            for j, v in enumerate(vals):
                if j != i:
                    prod = prod * v
            out.append(_unbroadcast(prod, vals[i].shape))
        return out

    return _emit(kind, data, tuple(inputs), vjp, tape)


def _sub(kind, inputs, tape):
    _check_arity(kind, inputs, 2)
    _common_shape(kind, inputs)
    a, b = inputs
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return _emit(kind, a.data - b.data, (a, b), vjp, tape)


def _div(kind, inputs, tape, eps=DIV_EPS):
    _check_arity(kind, inputs, 2)
    _common_shape(kind, inputs)
    a, b = inputs
    den = b.data + eps
    with np.errstate(all="ignore"):
        data = a.data / den
    av = a.data

    def vjp(g, needs):
        ga = _unbroadcast(g / den, a.shape) if needs[0] else None
        gb = _unbroadcast(-g * av / (den * den), b.shape) if needs[1] else None
        return ga, gb

    return _emit(kind, data, (a, b), vjp, tape)


def _squared_diff(kind, inputs, tape):
    _check_arity(kind, inputs, 2)
    _common_shape(kind, inputs)
    a, b = inputs
    d = a.data - b.data
    with np.errstate(all="ignore"):
        data = d * d

    def vjp(g, needs):
        gd = 2.0 * d * g
        return (_unbroadcast(gd, a.shape) if needs[0] else None,
                _unbroadcast(-gd, b.shape) if needs[1] else None)

    return _emit(kind, data, (a, b), vjp, tape)


def _minmax_elem(kind, inputs, tape):
    _check_arity(kind, inputs, 2)
    _common_shape(kind, inputs)
    a, b = inputs
    # ties go to the first operand
    first = a.data <= b.data if kind == "MinElem" else a.data >= b.data
    data = np.where(first, a.data, b.data)

    def vjp(g, needs):
        ga = _unbroadcast(np.where(first, g, 0.0), a.shape) if needs[0] else None
        gb = _unbroadcast(np.where(first, 0.0, g), b.shape) if needs[1] else None
        return ga, gb

    return _emit(kind, data, (a, b), vjp, tape)


def _last_axis(kind, x):
    if x.ndim < 1:
        raise ShapeError(f"{kind}: needs at least one axis, got a scalar")


def _reduce(kind, inputs, tape):
    _check_arity(kind, inputs, 1)
    (x,) = inputs
    v = x.data
    if kind.endswith("Last"):
        _last_axis(kind, x)
        axis = -1
        n = v.shape[-1]
    else:
        axis = None
        n = v.size
    op = kind[:-4] if kind.endswith("Last") else kind[:-3]
    if n == 0:
        raise ShapeError(f"{kind}: empty reduction")

    def expand(g):
        return g[..., None] if axis == -1 else g

    if op == "Sum":
        data = np.sum(v, axis=axis)

        def vjp(g, needs):
            return (np.broadcast_to(expand(g), v.shape).copy(),)
    elif op == "Mean":
        data = np.mean(v, axis=axis)

        def vjp(g, needs):
            return (np.broadcast_to(expand(g) / n, v.shape).copy(),)
    elif op == "Std":
        mu = np.mean(v, axis=axis, keepdims=axis is not None)
        centered = v - mu
        data = np.sqrt(np.mean(centered * centered, axis=axis))

        def vjp(g, needs):
            sd = expand(np.asarray(data))
            with np.errstate(all="ignore"):
                scale = np.where(sd > 0, expand(g) / (n * sd), 0.0)
            return (centered * scale,)
    elif op in ("Min", "Max"):
        idx = np.argmin(v, axis=-1) if op == "Min" else np.argmax(v, axis=-1)
        data = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]

        def vjp(g, needs):
            out = np.zeros_like(v)
            np.put_along_axis(out, idx[..., None], np.asarray(g)[..., None], axis=-1)
            return (out,)
    else:  # pragma: no cover - table driven
        raise ValueError(kind)
    return _emit(kind, np.asarray(data), (x,), vjp, tape)


def _cumsum(kind, inputs, tape):
    _check_arity(kind, inputs, 1)
    (x,) = inputs
    _last_axis(kind, x)

    def vjp(g, needs):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)

    return _emit(kind, np.cumsum(x.data, axis=-1), (x,), vjp, tape)


def _discounted_scan(v: np.ndarray, gamma: float, reverse: bool) -> np.ndarray:
    out = np.empty_like(v)
    n = v.shape[-1]
    order = range(n - 1, -1, -1) if reverse else range(n)
    acc = np.zeros(v.shape[:-1])
    with np.errstate(all="ignore"):
        for t in order:
            acc = v[..., t] + gamma * acc
            out[..., t] = acc
    return out


def _discounted_cumsum(kind, inputs, tape):
    _check_arity(kind, inputs, 2)
    x, gamma = inputs
    _last_axis(kind, x)
    if gamma.shape != ():
        raise ShapeError(f"{kind}: discount must be a scalar, got {gamma.shape}")
    gv = float(gamma.data)
    y = _discounted_scan(x.data, gv, reverse=True)

    def vjp(g, needs):
        gx = _discounted_scan(g, gv, reverse=False) if needs[0] else None
        gg = None
        if needs[1]:
            # z_t = dy_t/dgamma = y_{t+1} + gamma * z_{t+1}
            shifted = np.zeros_like(y)
            shifted[..., :-1] = y[..., 1:]
            z = _discounted_scan(shifted, gv, reverse=True)
            gg = np.asarray(np.sum(g * z))
        return gx, gg

    return _emit(kind, y, (x, gamma), vjp, tape)


def _unary(kind, inputs, tape, const=None):
    _check_arity(kind, inputs, 1)
    (x,) = inputs
    v = x.data
    with np.errstate(all="ignore"):
        if kind == "MulConst":
            if const is None:
                raise ContractError("MulConst needs a constant")
            c = float(const)
            data = c * v
            dfx = lambda g: c * g  # noqa: E731
        elif kind == "Clamp":
            data = np.clip(v, CLAMP_LOW, CLAMP_HIGH)
            mask = (v >= CLAMP_LOW) & (v <= CLAMP_HIGH)
            dfx = lambda g: np.where(mask, g, 0.0)  # noqa: E731
        elif kind == "Abs":
            data = np.abs(v)
            dfx = lambda g: np.sign(v) * g  # noqa: E731
        elif kind == "Square":
            data = v * v
            dfx = lambda g: 2.0 * v * g  # noqa: E731
        elif kind == "Log":
            safe = np.maximum(v, LOG_FLOOR)
            data = np.log(safe)
            dfx = lambda g: np.where(v > LOG_FLOOR, g / safe, 0.0)  # noqa: E731
        elif kind == "Exp":
            data = np.exp(v)
            dfx = lambda g: data * g  # noqa: E731
        elif kind == "Sin":
            data = np.sin(v)
            dfx = lambda g: np.cos(v) * g  # noqa: E731
        elif kind == "Cos":
            data = np.cos(v)
            dfx = lambda g: -np.sin(v) * g  # noqa: E731
        elif kind == "Tan":
            data = np.tan(v)
            dfx = lambda g: (1.0 + data * data) * g  # noqa: E731
        elif kind == "Atan":
            data = np.arctan(v)
            dfx = lambda g: g / (1.0 + v * v)  # noqa: E731
        else:  # pragma: no cover
            raise ValueError(kind)

    def vjp(g, needs):
        with np.errstate(all="ignore"):
            return (dfx(g),)

    return _emit(kind, np.asarray(data), (x,), vjp, tape)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in value; the result is a constant for differentiation."""
    return Tensor(x.data, requires_grad=False)


def _stop_gradient(kind, inputs, tape):
    _check_arity(kind, inputs, 1)
    return stop_gradient(inputs[0])


_TABLE: dict[str, Callable] = {
    "Add2": _add, "Add3": _add, "Add4": _add,
    "Mul2": _mul, "Mul3": _mul,
    "Sub": _sub,
    "DivEps": _div,
    "StopGradient": _stop_gradient,
    "MeanLast": _reduce, "SumLast": _reduce, "StdLast": _reduce,
    "MeanAll": _reduce, "SumAll": _reduce, "StdAll": _reduce,
    "MinLast": _reduce, "MaxLast": _reduce,
    "CumSum": _cumsum,
    "DiscountedCumSum": _discounted_cumsum,
    "SquaredDiff": _squared_diff,
    "MinElem": _minmax_elem, "MaxElem": _minmax_elem,
    "MulConst": _unary, "Clamp": _unary, "Abs": _unary, "Square": _unary,
    "Log": _unary, "Exp": _unary, "Sin": _unary, "Cos": _unary,
    "Tan": _unary, "Atan": _unary,
}

PRIMITIVE_KINDS = tuple(_TABLE)


def apply_primitive(kind, inputs: Sequence[Tensor], tape: Tape | None = None,
                    const: float | None = None, eps: float = DIV_EPS) -> Tensor:
    """Apply a tensor-valued primitive by name (or ``NodeKind``)."""
    name = getattr(kind, "value", kind)
    fn = _TABLE.get(name)
    if fn is None:
        raise ContractError(f"unknown primitive {name!r}")
    if name == "MulConst":
        return fn(name, list(inputs), tape, const=const)
    if name == "DivEps":
        return fn(name, list(inputs), tape, eps=eps)
    return fn(name, list(inputs), tape)


# ---------------------------------------------------------------------------
# network-level primitives (not exposed as graph nodes)


def linear(x: Tensor, w: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    xv, wv = x.data, w.data
    data = xv @ wv + b.data

    def vjp(g, needs):
        return (g @ wv.T if needs[0] else None,
                xv.T @ g if needs[1] else None,
                g.sum(axis=0) if needs[2] else None)

    return _emit("linear", data, (x, w, b), vjp, tape)


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    mask = x.data > 0

    def vjp(g, needs):
        return (g * mask,)

    return _emit("relu", x.data * mask, (x,), vjp, tape)


def tanh(x: Tensor, tape: Tape | None = None) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g, needs):
        return (g * (1.0 - y * y),)

    return _emit("tanh", y, (x,), vjp, tape)


def exp(x: Tensor, tape: Tape | None = None) -> Tensor:
    return apply_primitive("Exp", [x], tape)


def clip(x: Tensor, low: float, high: float, tape: Tape | None = None) -> Tensor:
    v = x.data
    mask = (v >= low) & (v <= high)

    def vjp(g, needs):
        return (np.where(mask, g, 0.0),)

    return _emit("clip", np.clip(v, low, high), (x,), vjp, tape)


def concat_last(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    k = a.shape[-1]

    def vjp(g, needs):
        return (g[..., :k] if needs[0] else None, g[..., k:] if needs[1] else None)

    return _emit("concat", np.concatenate([a.data, b.data], axis=-1), (a, b), vjp, tape)


def slice_last(x: Tensor, start: int, stop: int, tape: Tape | None = None) -> Tensor:
    shape = x.shape

    def vjp(g, needs):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _emit("slice", x.data[..., start:stop], (x,), vjp, tape)


def squeeze_last(x: Tensor, tape: Tape | None = None) -> Tensor:
    if x.ndim < 1 or x.shape[-1] != 1:
        raise ShapeError(f"squeeze: last axis must have size 1, got {x.shape}")

    def vjp(g, needs):
        return (g[..., None],)

    return _emit("squeeze", x.data[..., 0], (x,), vjp, tape)


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    return apply_primitive("Add2", [a, b], tape)


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    return apply_primitive("Mul2", [a, b], tape)


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def gaussian_log_density(u: Tensor, mean: Tensor, log_std: Tensor,
                         tape: Tape | None = None) -> Tensor:
    """Elementwise log N(u; mean, exp(log_std)^2)."""
    if not (u.shape == mean.shape == log_std.shape):
        raise ShapeError(f"gaussian: shapes {u.shape}, {mean.shape}, {log_std.shape}")
    inv_std = np.exp(-log_std.data)
    z = (u.data - mean.data) * inv_std
    data = -0.5 * z * z - log_std.data - _HALF_LOG_2PI

    def vjp(g, needs):
        gz = g * z * inv_std
        return (-gz if needs[0] else None,
                gz if needs[1] else None,
                g * (z * z - 1.0) if needs[2] else None)

    return _emit("gaussian_log_density", data, (u, mean, log_std), vjp, tape)


def tanh_log_det(u: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise log(1 - tanh(u)^2), evaluated without cancellation."""
    v = u.data
    data = 2.0 * (math.log(2.0) - v - np.logaddexp(0.0, -2.0 * v))

    def vjp(g, needs):
        return (-2.0 * np.tanh(v) * g,)

    return _emit("tanh_log_det", data, (u,), vjp, tape)


ATANH_LIMIT = 1.0 - 1e-6


def atanh_clipped(a: Tensor, tape: Tape | None = None) -> Tensor:
    v = a.data
    inside = np.abs(v) <= ATANH_LIMIT
    c = np.clip(v, -ATANH_LIMIT, ATANH_LIMIT)

    def vjp(g, needs):
        return (np.where(inside, g / (1.0 - c * c), 0.0),)

    return _emit("atanh", np.arctanh(c), (a,), vjp, tape)
