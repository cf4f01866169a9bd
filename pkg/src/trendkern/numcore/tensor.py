"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one operand requires a gradient. ``backward`` replays the tape in
reverse. Without an active tape the primitives are plain numpy evaluations,
which is what inference uses.
"""
import builtins
import threading

import numpy as np

from ..errors import NonFiniteError, ShapeError
from . import kernels

_local = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        _check_finite("tensor", arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        out = cls.__new__(cls)
        out.data = arr
        out.requires_grad = False
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Entry:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; tapes nest per thread and are never shared
    between threads.
    """

    def __init__(self):
        self.entries = []
        self.produced = set()

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self.entries)


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op, inputs, arrays, backward):
    """Wrap forward arrays as tensors and record them on the active tape."""
    outs = []
    for arr in arrays:
        _check_finite(op, arr)
        outs.append(Tensor._wrap(arr))
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        for t in outs:
            t.requires_grad = True
        tape.entries.append(_Entry(inputs, outs, backward))
        tape.produced.update(id(t) for t in outs)
    return outs


def _one(op, inputs, arr, backward):
    return _emit(op, inputs, (arr,), lambda gs: backward(gs[0]))[0]


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


# ---------------------------------------------------------------- primitives


def matmul(a, b):
    """2-D matrix product (m, k) @ (k, n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _one("matmul", (a, b), A @ B, backward)


def _broadcast_rule(op, a, b):
    """Same shape, a 1-D row vector over the last axis, or a scalar."""
    if a.shape == b.shape:
        return None
    if b.data.ndim == 0:
        return "scalar"
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "row"
    raise _shape_error(op, a, b)


def _reduce_to(g, how, shape):
    if how is None:
        return g
    if how == "scalar":
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def add(a, b):
    """Elementwise sum; ``b`` may be a row vector or scalar broadcast over ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    how = _broadcast_rule("add", a, b)
    bshape = b.shape

    def backward(g):
        return g, _reduce_to(g, how, bshape)

    return _one("add", (a, b), a.data + b.data, backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    how = _broadcast_rule("sub", a, b)
    bshape = b.shape

    def backward(g):
        return g, -_reduce_to(g, how, bshape)

    return _one("sub", (a, b), a.data - b.data, backward)


def mul(a, b):
    """Elementwise product; ``b`` may be a row vector or scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    how = _broadcast_rule("mul", a, b)
    A, B = a.data, b.data

    def backward(g):
        return g * B, _reduce_to(g * A, how, B.shape)

    return _one("mul", (a, b), A * B, backward)


def concat(tensors):
    """Concatenate along the last axis."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise _shape_error("concat", tensors[0], t)
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _one("concat", tuple(tensors), np.concatenate([t.data for t in tensors], axis=-1), backward)


def slice(x, start, stop, axis=-1):
    """``x[start:stop]`` along ``axis`` (0 or -1)."""
    x = _as_tensor(x)
    ax = axis % x.data.ndim
    n = x.shape[ax]
    start, stop, _ = builtins.slice(start, stop).indices(n)
    if stop <= start:
        raise ShapeError(f"slice: empty range [{start}, {stop}) on axis of length {n}")
    index = [np.s_[:]] * x.data.ndim
    index[ax] = np.s_[start:stop]
    index = tuple(index)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _one("slice", (x,), x.data[index].copy(), backward)


def sigmoid(x):
    x = _as_tensor(x)
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _one("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def tanh(x):
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _one("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x):
    x = _as_tensor(x)
    mask = x.data > 0
    return _one("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def square(x):
    x = _as_tensor(x)
    X = x.data
    return _one("square", (x,), X * X, lambda g: (2.0 * X * g,))


def abs(x):
    x = _as_tensor(x)
    X = x.data
    return _one("abs", (x,), np.abs(X), lambda g: (np.sign(X) * g,))


def sum(x):
    """Sum of every entry, as a scalar tensor."""
    x = _as_tensor(x)
    shape = x.shape
    return _one("sum", (x,), np.asarray(x.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean(x):
    """Mean of every entry, as a scalar tensor."""
    x = _as_tensor(x)
    shape, n = x.shape, x.data.size
    if n == 0:
        raise ShapeError("mean: empty tensor")
    return _one("mean", (x,), np.asarray(x.data.mean()), lambda g: (np.full(shape, float(g) / n),))


def euclidean_distance(a, b):
    """Row-wise Euclidean distance between (n, d) tensors, shape (n,).

    The subgradient at zero distance is taken as zero.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 2:
        raise _shape_error("euclidean_distance", a, b)
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=1))

    def backward(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(d[:, None] > 0, diff / d[:, None], 0.0)
        ga = unit * g[:, None]
        return ga, -ga

    return _one("euclidean_distance", (a, b), d, backward)


def embedding(table, ids):
    """Gather rows of a (vocab, dim) table; returns (len(ids), dim)."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"embedding: table {table.shape} with ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: id out of range for table {table.shape}")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids, g)
        return (out,)

    return _one("embedding", (table,), table.data[ids], backward)


def l2_normalize(x):
    """Scale every vector along the last axis to unit Euclidean norm."""
    x = _as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    if np.any(norm == 0.0):
        raise ShapeError("l2_normalize: zero-norm vector")
    y = x.data / norm

    def backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _one("l2_normalize", (x,), y, backward)


def lstm_cell(gates, c_prev):
    """Fused LSTM pointwise step.

    ``gates`` holds the (B, 4H) pre-activations in i, f, g, o order.
    Returns ``(h, c)``.
    """
    gates, c_prev = _as_tensor(gates), _as_tensor(c_prev)
    if gates.data.ndim != 2 or c_prev.data.ndim != 2 or gates.shape != (c_prev.shape[0], 4 * c_prev.shape[1]):
        raise _shape_error("lstm_cell", gates, c_prev)
    acts, c, tanh_c, h = kernels.lstm_forward(gates.data, c_prev.data)
    C = c_prev.data

    def backward(gs):
        dh, dc = gs
        if dh is None:
            dh = np.zeros_like(C)
        if dc is None:
            dc = np.zeros_like(C)
        return kernels.lstm_backward(dh, dc, acts, C, tanh_c)

    h_t, c_t = _emit("lstm_cell", (gates, c_prev), (h, c), backward)
    return h_t, c_t


def lstm_step(value, w_value, fixed, h_prev, wh, c_prev):
    """Fused LSTM timestep.

    Pre-activations are ``value @ w_value + fixed + h_prev @ wh`` with
    ``value`` (B, 1), ``w_value`` (1, 4H), ``fixed`` (B, 4H), ``h_prev`` (B, H)
    and ``wh`` (H, 4H); the cell update follows ``lstm_cell``. Returns ``(h, c)``.
    """
    value, w_value, fixed, h_prev, wh, c_prev = (
        _as_tensor(t) for t in (value, w_value, fixed, h_prev, wh, c_prev))
    B, H = c_prev.shape
    expected = ((B, 1), (1, 4 * H), (B, 4 * H), (B, H), (H, 4 * H))
    for name, t, shape in zip(("value", "w_value", "fixed", "h_prev", "wh"),
                              (value, w_value, fixed, h_prev, wh), expected):
        if t.shape != shape:
            raise ShapeError(f"lstm_step: {name} has shape {tuple(t.shape)}, expected {shape} "
                             f"for cell state {(B, H)}")
    V, WV, HP, WH, C = value.data, w_value.data, h_prev.data, wh.data, c_prev.data
    acts, c, tanh_c, h = kernels.lstm_step_forward(V, WV, fixed.data, HP @ WH, C)
    need = [t.requires_grad for t in (value, w_value, fixed, h_prev, wh)]

    def backward(gs):
        dh, dc = gs
        if dh is None:
            dh = np.zeros_like(C)
        if dc is None:
            dc = np.zeros_like(C)
        dg, dc_prev = kernels.lstm_backward(dh, dc, acts, C, tanh_c)
        return (
            dg @ WV.T if need[0] else None,
            V.T @ dg if need[1] else None,
            dg,
            dg @ WH.T if need[3] else None,
            HP.T @ dg if need[4] else None,
            dc_prev,
        )

    h_t, c_t = _emit("lstm_step", (value, w_value, fixed, h_prev, wh, c_prev), (h, c), backward)
    return h_t, c_t


# ---------------------------------------------------------------- backward


def backward(tape, loss, wrt=None):
    """Reverse-accumulate gradients of scalar ``loss`` through ``tape``.

    Each leaf's ``.grad`` is set (zeros when disconnected). When ``wrt`` is
    given, the gradients for those tensors are returned in order.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for entry in reversed(tape.entries):
        out_grads = [grads.pop(id(o), None) for o in entry.outputs]
        if all(g is None for g in out_grads):
            continue
        in_grads = entry.backward(out_grads)
        for t, g in zip(entry.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in tape.produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.get(key)
        t.grad = np.zeros_like(t.data) if g is None else np.asarray(g).reshape(t.shape)
        _check_finite("backward", t.grad)
    if wrt is None:
        return None
    out = []
    for t in wrt:
        if id(t) in leaves:
            out.append(t.grad)
        else:
            t.grad = np.zeros_like(t.data)
            out.append(t.grad)
    return out

