"""Dense float64 tensors with a recording tape for reverse-mode gradients.

Operations record themselves on the innermost active :class:`GradTape` when at
least one input requires a gradient. Nothing is recorded outside a tape, which
is how evaluation passes stay cheap.

Determinism: every op is a plain numpy kernel with a fixed reduction order, so
results are bitwise reproducible for a fixed BLAS thread count.
"""

from __future__ import annotations

import itertools
import weakref
from typing import Callable, Optional, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape (non-scalar loss, stale handle, ...)."""


_tape_ids = itertools.count(1)
_active: list["GradTape"] = []
_registry: "weakref.WeakValueDictionary[int, GradTape]" = weakref.WeakValueDictionary()


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: "Tensor", inputs: tuple["Tensor", ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class GradTape:
    """Ordered record of differentiable operations.

    Nodes are appended as ops execute, so the list is already in topological
    order and the backward sweep simply walks it in reverse.
    """

    def __init__(self):
        self.id = next(_tape_ids)
        self.nodes: list[_Node] = []
        self._cleared = False
        _registry[self.id] = self

    def __enter__(self) -> "GradTape":
        if self._cleared:
            raise TapeError("cannot re-enter a cleared tape")
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], backward: BackwardFn) -> None:
        out.tape_id = (self.id, len(self.nodes))
        self.nodes.append(_Node(out, inputs, backward))

    def clear(self) -> None:
        for node in self.nodes:
            node.out.tape_id = None
        self.nodes = []
        self._cleared = True

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._cleared:
            raise TapeError("tape has been cleared; its handles are invalid")
        if loss.tape_id is None or loss.tape_id[0] != self.id:
            raise TapeError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {loss.tape_id[1]: np.ones_like(loss.data)}
        for idx in range(loss.tape_id[1], -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                handle = inp.tape_id
                if handle is not None and handle[0] == self.id:
                    prev = grads.get(handle[1])
                    grads[handle[1]] = ig if prev is None else prev + ig
                else:
                    # leaf: a parameter or an input flagged for gradients
                    if inp.grad is None:
                        inp.grad = np.array(ig, dtype=np.float64, copy=True)
                    else:
                        inp.grad += ig


def current_tape() -> Optional[GradTape]:
    return _active[-1] if _active else None


class Tensor:
    """Row-major float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.tape_id: Optional[tuple[int, int]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def make_op(data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = current_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_id is None:
        raise TapeError("loss is not attached to a live tape")
    tape = _registry.get(loss.tape_id[0])
    if tape is None:
        raise TapeError("loss belongs to a tape that no longer exists")
    tape.backward(loss)


# ---------------------------------------------------------------- elementwise

def _bias_shape_ok(a: np.ndarray, b: np.ndarray) -> bool:
    return a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return make_op(a.data + b.data, (a, b), lambda g: (g, g))
    if _bias_shape_ok(a.data, b.data):
        return make_op(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    if b.data.size == 1 and b.ndim == 0:
        return make_op(a.data + b.data, (a, b), lambda g: (g, np.asarray(g.sum())))
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        return make_op(a.data - b.data, (a, b), lambda g: (g, -g))
    if _bias_shape_ok(a.data, b.data):
        return make_op(a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=0)))
    raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"div: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_op(out, (a, b), lambda g: (g / bd, -g * out / bd))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return make_op(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return make_op(np.log(ad), (a,), lambda g: (g / ad,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_op(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows expects an m×n matrix with n ≥ 1, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_op(s, (x,), bw)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return make_op(a.data.T, (a,), lambda g: (g.T,))


def diagonal(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal expects a square matrix, got {a.shape}")
    return make_op(np.diagonal(a.data).copy(), (a,), lambda g: (np.diag(g),))


# ---------------------------------------------------------------- reductions / views

def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    shape = a.shape
    if axis is None:
        return make_op(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    out = a.data.sum(axis=axis)
    return make_op(out, (a,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul_scalar(sum(a, axis), 1.0 / count)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return make_op(a.data[:, start:stop].copy(), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from exc
    return make_op(out, (a,), lambda g: (g.reshape(old),))


def check_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values in {what}")
