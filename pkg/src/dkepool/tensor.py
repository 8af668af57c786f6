"""Dense float64 matrices with a reverse-mode differentiation tape.

Every value is a 2-D row-major matrix: scalars are 1x1, row vectors 1xn,
column vectors nx1. Operations executed while a :class:`Tape` is active are
recorded in forward order and replayed in reverse by ``Tape.backward``. The
tape is rebuilt on every forward pass; there is no persistent graph, and a
tape together with its tensors belongs to a single thread.

Binary elementwise operations broadcast a 1x1 scalar, a 1xn row or an mx1
column against an mxn matrix; anything wider is rejected.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, DimensionError, EmptyInputError, NumericError

_AXES = ("rows", "cols", "all")

_local = threading.local()


def active_tape():
    """The tape currently recording on this thread, or None."""
    return getattr(_local, "tape", None)


class Tape:
    """Ordered record of the differentiable operations of one forward pass.

    Use as a context manager::

        with Tape() as tape:
            loss = model_forward(...)
        tape.backward(loss)

    Each record holds the output tensor and a backward rule that reads the
    output's gradient and accumulates into the inputs' gradients. Forward
    execution order is a topological order, so a single reverse sweep visits
    every operation exactly once.
    """

    def __init__(self):
        self._records = []
        self._output_ids = set()
        self._consumed = False

    def __enter__(self):
        if active_tape() is not None:
            raise ContractError("a Tape is already active on this thread")
        _local.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.tape = None
        return False

    def __len__(self):
        return len(self._records)

    def record(self, output, rule):
        """Append an operation; ``rule(grad)`` must accumulate into the inputs."""
        self._records.append((output, rule))
        self._output_ids.add(id(output))

    def backward(self, loss):
        """Populate ``grad`` on every recorded tensor that influences ``loss``.

        Gradients accumulate additively, so a tensor used twice receives the
        sum of both path gradients. A tape can be consumed only once; rebuild
        the forward pass for another backward.
        """
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
        if id(loss) not in self._output_ids:
            raise ContractError("loss was not produced under this tape")
        if self._consumed:
            raise ContractError("tape already consumed by a backward pass")
        self._consumed = True
        loss.grad = np.ones((1, 1))
        for out, rule in reversed(self._records):
            if out.grad is not None:
                rule(out.grad)


class Tensor:
    """A 2-D float64 matrix with an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, arr.size)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D matrices, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @classmethod
    def _wrap(cls, arr, requires_grad):
        # Internal: adopt a freshly computed array without copying.
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def relu(self):
        return relu(self)

    def sum(self, axis="all"):
        return reduce_sum(self, axis)

    def mean(self, axis="all"):
        return reduce_mean(self, axis)

    def max(self, axis="all"):
        return reduce_max(self, axis)

    def reshape(self, rows, cols):
        return reshape(self, rows, cols)

    def slice_rows(self, start, stop):
        return slice_rows(self, start, stop)


def zeros(rows, cols):
    return Tensor._wrap(np.zeros((rows, cols)), False)


def ones(rows, cols):
    return Tensor._wrap(np.ones((rows, cols)), False)


def eye(n):
    return Tensor._wrap(np.eye(n), False)


def apply_op(inputs, out_data, rule):
    """Build an op output and record it on the active tape.

    Extension point for fused operations defined outside this module (graph
    aggregation, cross entropy): ``rule(grad)`` must accumulate gradients into
    ``inputs`` via :func:`accumulate_grad`.
    """
    out = Tensor._wrap(out_data, any(t.requires_grad for t in inputs))
    tape = active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, rule)
    return out


def accumulate_grad(t, g):
    """Add ``g`` into ``t.grad``, allocating the buffer on first use."""
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _broadcast_ok(sa, sb):
    for da, db in zip(sa, sb):
        if da != db and 1 not in (da, db):
            return False
    return True


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] > 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] > 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def matmul(a, b):
    """Matrix product; backward is g @ b^T into a and a^T @ g into b."""
    if a.cols != b.rows:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} @ {b.shape}"
        )

    def rule(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    return apply_op((a, b), a.data @ b.data, rule)


def _binary(a, b, out_data, da, db):
    def rule(g):
        accumulate_grad(a, _unbroadcast(da(g), a.shape))
        accumulate_grad(b, _unbroadcast(db(g), b.shape))

    return apply_op((a, b), out_data, rule)


def add(a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"add shapes do not broadcast: {a.shape} vs {b.shape}")
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"sub shapes do not broadcast: {a.shape} vs {b.shape}")
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b):
    """Elementwise (Hadamard) product with row/column broadcasting."""
    if not _broadcast_ok(a.shape, b.shape):
        raise DimensionError(f"mul shapes do not broadcast: {a.shape} vs {b.shape}")
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def scale(a, c):
    """Multiply by a Python scalar constant."""
    c = float(c)

    def rule(g):
        accumulate_grad(a, g * c)

    return apply_op((a,), a.data * c, rule)


def relu(a):
    mask = a.data > 0.0

    def rule(g):
        accumulate_grad(a, g * mask)

    return apply_op((a,), np.where(mask, a.data, 0.0), rule)


def _check_reduce(a, axis):
    if a.data.size == 0:
        raise EmptyInputError("cannot reduce an empty tensor")
    if axis not in _AXES:
        raise ContractError(f"axis must be one of {_AXES}, got {axis!r}")


def reduce_sum(a, axis="all"):
    _check_reduce(a, axis)
    if axis == "all":
        out = np.array([[a.data.sum()]])

        def rule(g):
            accumulate_grad(a, np.full_like(a.data, g[0, 0]))

    elif axis == "rows":
        out = a.data.sum(axis=0, keepdims=True)

        def rule(g):
            accumulate_grad(a, np.broadcast_to(g, a.shape))

    else:
        out = a.data.sum(axis=1, keepdims=True)

        def rule(g):
            accumulate_grad(a, np.broadcast_to(g, a.shape))

    return apply_op((a,), out, rule)


def reduce_mean(a, axis="all"):
    _check_reduce(a, axis)
    count = {"all": a.data.size, "rows": a.rows, "cols": a.cols}[axis]
    if axis == "all":
        out = np.array([[a.data.mean()]])
    elif axis == "rows":
        out = a.data.mean(axis=0, keepdims=True)
    else:
        out = a.data.mean(axis=1, keepdims=True)

    def rule(g):
        accumulate_grad(a, np.broadcast_to(g / count, a.shape))

    return apply_op((a,), out, rule)


def reduce_max(a, axis="all"):
    """Max reduction; ties route the gradient to the lowest flat index."""
    _check_reduce(a, axis)
    if axis == "all":
        flat = int(a.data.argmax())
        out = np.array([[a.data.flat[flat]]])

        def rule(g):
            accumulate_grad(a, _one_hot_like(a.data, [flat], g.flat[:1]))

    elif axis == "rows":
        idx = a.data.argmax(axis=0)
        out = a.data.max(axis=0, keepdims=True)

        def rule(g):
            buf = np.zeros_like(a.data)
            buf[idx, np.arange(a.cols)] = g[0]
            accumulate_grad(a, buf)

    else:
        idx = a.data.argmax(axis=1)
        out = a.data.max(axis=1, keepdims=True)

        def rule(g):
            buf = np.zeros_like(a.data)
            buf[np.arange(a.rows), idx] = g[:, 0]
            accumulate_grad(a, buf)

    return apply_op((a,), out, rule)


def _one_hot_like(data, flat_indices, values):
    buf = np.zeros_like(data)
    buf.flat[flat_indices] = values
    return buf


def transpose(a):
    def rule(g):
        accumulate_grad(a, g.T)

    return apply_op((a,), np.ascontiguousarray(a.data.T), rule)


def slice_rows(a, start, stop):
    """Contiguous row slice ``a[start:stop]`` as a new tensor."""
    if not (0 <= start < stop <= a.rows):
        raise DimensionError(
            f"row slice [{start}:{stop}] out of range for {a.rows} rows"
        )

    def rule(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[start:stop] += g

    return apply_op((a,), a.data[start:stop].copy(), rule)


def _concat(tensors, axis):
    if not tensors:
        raise EmptyInputError("concat of zero tensors")
    other = 1 - axis
    width = tensors[0].shape[other]
    for t in tensors:
        if t.shape[other] != width:
            raise DimensionError(
                f"concat operands disagree on axis {other}: "
                f"{[t.shape for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            piece = g[lo:hi] if axis == 0 else g[:, lo:hi]
            accumulate_grad(t, piece)

    return apply_op(tuple(tensors), out, rule)


def concat_rows(tensors):
    """Stack tensors vertically (shared column count)."""
    return _concat(list(tensors), 0)


def concat_cols(tensors):
    """Stack tensors horizontally (shared row count)."""
    return _concat(list(tensors), 1)


def reshape(a, rows, cols):
    if rows * cols != a.data.size:
        raise DimensionError(
            f"cannot reshape {a.shape} ({a.data.size} values) to ({rows}, {cols})"
        )

    def rule(g):
        accumulate_grad(a, g.reshape(a.shape))

    return apply_op((a,), a.data.reshape(rows, cols).copy(), rule)


def trace(a):
    """Sum of the diagonal of a square matrix as a 1x1 tensor."""
    if a.rows != a.cols:
        raise ContractError(f"trace needs a square matrix, got {a.shape}")
    n = a.rows

    def rule(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad.flat[:: n + 1] += g[0, 0]

    return apply_op((a,), np.array([[np.trace(a.data)]]), rule)


def power(s, p):
    """Raise a 1x1 tensor to a float power."""
    if s.shape != (1, 1):
        raise ContractError(f"power needs a 1x1 tensor, got {s.shape}")
    v = s.data[0, 0]
    if not np.isfinite(v):
        raise NumericError("power of a non-finite scalar")
    if v <= 0.0 and (p != round(p) or p < 0):
        raise NumericError(f"power({v}, {p}) is undefined for this library")
    out = np.array([[v**p]])

    def rule(g):
        accumulate_grad(s, g * p * v ** (p - 1.0))

    return apply_op((s,), out, rule)


def scale_by(a, s):
    """Multiply a tensor by a 1x1 tensor (both differentiable)."""
    if s.shape != (1, 1):
        raise ContractError(f"scale_by needs a 1x1 scalar tensor, got {s.shape}")
    v = s.data[0, 0]

    def rule(g):
        accumulate_grad(a, g * v)
        accumulate_grad(s, np.array([[np.sum(g * a.data)]]))

    return apply_op((a, s), a.data * v, rule)
