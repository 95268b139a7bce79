"""Reverse-mode automatic differentiation on float64 numpy arrays.

The engine records operations on an explicit :class:`Tape` and computes
gradients by walking the tape backwards. Every backward rule is written
in terms of the same recordable operations, so calling :func:`grad` with
``create_graph=True`` re-records the backward pass and the returned
gradients can be differentiated again. That is all the machinery needed
for losses that contain input-gradients of an energy function.

Conventions:

* all data is float64, C-contiguous;
* elementwise ops accept equal shapes or a suffix broadcast (the smaller
  shape must match the trailing dims of the larger, e.g. [W] against
  [B, W]); anything else is a DimensionError;
* every operation checks its result for NaN/Inf and raises NumericError
  instead of letting them propagate.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, DomainError, GraphError, NumericError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "grad",
    "no_record",
    "active_tape",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "matmul",
    "transpose",
    "square",
    "sqrt",
    "exp",
    "log",
    "elu",
    "reshape",
    "narrow",
    "concat",
    "finite_diff_check",
]


class Tensor:
    """Immutable float64 array participating in tape recording."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would also promote 0-d arrays to 1-d,
            # so only call it when actually needed
            arr = np.ascontiguousarray(arr)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def narrow(self, axis, start, stop):
        return narrow(self, axis, start, stop)

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, _coerce(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _coerce(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def tensor(data) -> Tensor:
    """Build a Tensor, rejecting non-finite input."""
    t = Tensor(data)
    if not np.all(np.isfinite(t.data)):
        raise NumericError("tensor() input contains NaN or Inf")
    return t


class _Node:
    __slots__ = ("op", "inputs", "out", "bwd")

    def __init__(self, op, inputs, out, bwd):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


class Tape:
    """Append-only record of operations, topologically ordered by construction."""

    __slots__ = ("nodes", "_touched")

    def __init__(self):
        self.nodes = []
        self._touched = set()

    def __len__(self):
        return len(self.nodes)

    def knows(self, t: Tensor) -> bool:
        return id(t) in self._touched

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False


_LOCAL = threading.local()


def _stack():
    try:
        return _LOCAL.stack
    except AttributeError:
        _LOCAL.stack = []
        return _LOCAL.stack


def _active() -> Tape | None:
    s = _stack()
    return s[-1] if s else None


def active_tape() -> Tape | None:
    """The tape currently receiving recorded ops, if any."""
    return _active()


@contextmanager
def no_record():
    """Temporarily suspend recording on the current thread."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def _emit(op, out_data, inputs, bwd) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite result from op '{op}'")
    out = Tensor(out_data)
    tape = _active()
    if tape is not None:
        tape.nodes.append(_Node(op, inputs, out, bwd))
        touched = tape._touched
        for t in inputs:
            touched.add(id(t))
        touched.add(id(out))
    return out


def _suffix_broadcast(a_shape, b_shape, op):
    """Validate suffix-only broadcasting and return the output shape."""
    if a_shape == b_shape:
        return a_shape
    if len(a_shape) >= len(b_shape):
        big, small = a_shape, b_shape
    else:
        big, small = b_shape, a_shape
    if small != big[len(big) - len(small):]:
        raise DimensionError(f"{op}: shapes {a_shape} and {b_shape} do not conform")
    return big


def _unbroadcast(g: Tensor, shape) -> Tensor:
    """Reduce a suffix-broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return _sum(g, axis=tuple(range(lead)))


def add(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape, "add")
    return _emit(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape, "sub")
    return _emit(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape, "mul")
    return _emit(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _suffix_broadcast(a.shape, b.shape, "div")
    out_holder = []

    def bwd(g):
        out = out_holder[0]
        da = _unbroadcast(div(g, b), a.shape)
        db = _unbroadcast(neg(div(mul(g, out), b)), b.shape)
        return da, db

    res = _emit("div", a.data / b.data, (a, b), bwd)
    out_holder.append(res)
    return res


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (scale(g, c),))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    return _emit("transpose", a.data.T.copy(), (a,), lambda g: (transpose(g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D tensors, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return _emit(
        "matmul", a.data @ b.data, (a, b),
        lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
    )


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    axis = tuple(ax % ndim for ax in axis)
    if len(set(axis)) != len(axis):
        raise DimensionError(f"repeated axis in {axis}")
    return axis


def _sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    in_shape = a.shape

    def bwd(g):
        if axis is None:
            kshape = (1,) * len(in_shape)
        else:
            kshape = tuple(1 if i in axis else s for i, s in enumerate(in_shape))
        gk = g if keepdims or g.shape == kshape else reshape(g, kshape)
        return (_broadcast_to(gk, in_shape),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def _mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    naxis = _norm_axis(axis, a.ndim)
    if naxis is None:
        n = a.size
    else:
        n = 1
        for ax in naxis:
            n *= a.shape[ax]
    if n == 0:
        raise DimensionError("mean over zero elements")
    return scale(_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _broadcast_to(a: Tensor, shape) -> Tensor:
    """General numpy-style broadcast; internal (used by sum's backward)."""
    shape = tuple(shape)
    if a.shape == shape:
        return a
    in_shape = a.shape
    lead = len(shape) - len(in_shape)
    if lead < 0:
        raise DimensionError(f"cannot broadcast {in_shape} to {shape}")
    axes = list(range(lead))
    for i, s in enumerate(in_shape):
        if s == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
        elif s != shape[lead + i]:
            raise DimensionError(f"cannot broadcast {in_shape} to {shape}")
    axes = tuple(axes)

    def bwd(g):
        red = _sum(g, axis=axes) if axes else g
        return (red if red.shape == in_shape else reshape(red, in_shape),)

    return _emit("broadcast", np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def square(a: Tensor) -> Tensor:
    return _emit("square", np.square(a.data), (a,), lambda g: (scale(mul(g, a), 2.0),))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of a negative value")
    out_holder = []

    def bwd(g):
        return (div(scale(g, 0.5), out_holder[0]),)

    res = _emit("sqrt", np.sqrt(a.data), (a,), bwd)
    out_holder.append(res)
    return res


def exp(a: Tensor) -> Tensor:
    out_holder = []

    def bwd(g):
        return (mul(g, out_holder[0]),)

    res = _emit("exp", np.exp(a.data), (a,), bwd)
    out_holder.append(res)
    return res


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    return _emit("log", np.log(a.data), (a,), lambda g: (div(g, a),))


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit: x for x > 0, exp(x) - 1 otherwise.

    The derivative treats the active/inactive mask as locally constant,
    which keeps second derivatives correct almost everywhere.
    """
    pos = a.data > 0.0
    mask = pos.astype(np.float64)
    inv = Tensor(1.0 - mask)
    maskt = Tensor(mask)

    def bwd(g):
        # exp evaluated on a clamped copy so large positives cannot overflow
        negpart = mul(a, inv)
        deriv = add(maskt, mul(inv, exp(negpart)))
        return (mul(g, deriv),)

    out = np.where(pos, a.data, np.expm1(a.data))
    return _emit("elu", out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    in_shape = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    return _emit("reshape", out.copy(), (a,), lambda g: (reshape(g, in_shape),))


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice [start:stop] along one axis."""
    axis = axis % a.ndim
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"narrow bounds [{start}:{stop}] invalid for axis of length {n}")
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(a.ndim))
    before = tuple(s if i != axis else start for i, s in enumerate(a.shape))
    after = tuple(s if i != axis else n - stop for i, s in enumerate(a.shape))

    def bwd(g):
        parts = []
        if start > 0:
            parts.append(Tensor(np.zeros(before)))
        parts.append(g)
        if n - stop > 0:
            parts.append(Tensor(np.zeros(after)))
        return (concat(parts, axis=axis) if len(parts) > 1 else g,)

    return _emit("narrow", a.data[idx].copy(), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors:
        if t.ndim != ndim:
            raise DimensionError("concat tensors must share rank")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(narrow(g, axis, int(offsets[i]), int(offsets[i + 1]))
                     for i in range(len(tensors)))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit("concat", out, tuple(tensors), bwd)


def _ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones(t.shape))


def grad(output: Tensor, wrt, *, tape: Tape | None = None,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of a scalar `output` with respect to each tensor in `wrt`.

    With ``create_graph=True`` the backward pass itself is recorded on the
    tape, so the returned gradients can be differentiated again.
    """
    if output.size != 1:
        raise DimensionError(f"grad needs a scalar output, got shape {output.shape}")
    if tape is None:
        tape = _active()
    if tape is None:
        raise GraphError("grad called with no tape")
    wrt = list(wrt)
    for t in wrt:
        if not tape.knows(t):
            raise GraphError("a wrt tensor never took part in this tape")
    if not tape.knows(output):
        raise GraphError("output was not recorded on this tape")

    grads: dict[int, Tensor] = {id(output): _ones_like(output)}
    ctx = tape if create_graph else no_record()
    with ctx:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.bwd(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                held = grads.get(id(t))
                grads[id(t)] = ig if held is None else add(held, ig)

    results = []
    for t in wrt:
        g = grads.get(id(t))
        results.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return results


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative gap between reverse-mode and central-difference gradients.

    `f` must be a deterministic Tensor -> scalar Tensor function. The
    relative gap per coordinate uses max(|analytic|, 1e-8) in the
    denominator; the largest coordinate gap is returned.
    """
    try:
        with Tape() as tp:
            y = f(x)
            if y.size != 1:
                raise DimensionError("finite_diff_check needs a scalar-valued f")
            (g,) = grad(y, [x], tape=tp)
        analytic = g.data

        base = x.data
        numeric = np.empty_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            stepped = base.copy().reshape(-1)
            stepped[i] += h
            with Tape():
                hi = f(Tensor(stepped.reshape(base.shape))).item()
            stepped[i] -= 2.0 * h
            with Tape():
                lo = f(Tensor(stepped.reshape(base.shape))).item()
            flat[i] = (hi - lo) / (2.0 * h)
    except NumericError as e:
        raise DomainError(f"non-finite evaluation during finite differences: {e}") from e

    denom = np.maximum(np.abs(analytic), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
