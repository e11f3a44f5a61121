"""Small reverse-mode automatic differentiation engine on top of numpy.

Every differentiable operation is a :class:`Function` subclass with a
``forward`` working on raw arrays and a ``backward`` mapping the output
gradient to one gradient per input.  Calling an operation on tensors that
require gradients appends a node to the graph; nodes carry a global
creation sequence number, so reverse creation order is a valid reverse
topological order for the backward sweep.

Broadcasting is deliberately restricted: binary elementwise ops accept a
scalar or an operand of identical shape.  Anything else must go through
:func:`broadcast_to`, whose backward rule sums over the expanded axes.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "DomainError",
    "DegenerateInputError",
    "GraphError",
    "Tensor",
    "Function",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "pow",
    "exp",
    "log",
    "max0",
    "clamp_min",
    "reduce",
    "tsum",
    "mean",
    "frobenius_norm",
    "tmax",
    "softmax_rows",
    "log_softmax_rows",
    "l2_normalize",
    "reshape",
    "transpose",
    "broadcast_to",
    "take",
    "stack",
    "dot",
    "backward",
    "grad",
    "gradcheck",
    "GradcheckReport",
]


class AutodiffError(Exception):
    """Base class for errors raised by the differentiation engine."""


class ShapeError(AutodiffError, ValueError):
    pass


class DomainError(AutodiffError, ValueError):
    pass


class DegenerateInputError(DomainError):
    pass


class GraphError(AutodiffError, RuntimeError):
    pass


_state = threading.local()
_sequence = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation, frozen models)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense float64 array, optionally attached to a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "_seq", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: Function | None = None
        self._seq = -1

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return pow(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return reshape(take(self, [int(idx)], axis=0), self.shape[1:])
        if isinstance(idx, (list, np.ndarray)):
            return take(self, idx, axis=0)
        raise TypeError("Tensor indexing supports an int or a list of ints along axis 0")

    # -- method sugar --------------------------------------------------
    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def max(self, axis=None):
        return tmax(self, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return max0(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """A differentiable operation.

    ``forward`` receives the input arrays (plus keyword options) and may
    stash whatever ``backward`` needs on ``self``.  ``backward`` receives the
    gradient of the output and returns a tuple with one entry per input,
    ``None`` for inputs that get no gradient.
    """

    name = "function"

    def __init__(self):
        self.parents: tuple[Tensor, ...] = ()
        self.consumed = False

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = tuple(_as_tensor(x) for x in inputs)
        fn = cls()
        out = np.asarray(fn.forward(*(t.data for t in tensors), **kwargs), dtype=np.float64)
        if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(t.data)) for t in tensors):
            raise DomainError(f"{cls.name}: non-finite result from finite inputs")
        result = Tensor.__new__(Tensor)
        result.data = out
        result.grad = None
        result._ctx = None
        result._seq = -1
        result.requires_grad = False
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            result.requires_grad = True
            fn.parents = tensors
            result._ctx = fn
            result._seq = next(_sequence)
        return result


# ----------------------------------------------------------------------
# matrix product

class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim not in (2, 3) or b.ndim not in (2, 3):
            raise ShapeError(f"matmul expects rank-2 or batched rank-3 operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul batch sizes differ: {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, g):
        a, b = self.a, self.b
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        if a.ndim == 2 and ga.ndim == 3:
            ga = ga.sum(axis=0)
        if b.ndim == 2 and gb.ndim == 3:
            gb = gb.sum(axis=0)
        return ga, gb


def matmul(a, b) -> Tensor:
    """Matrix product; a rank-3 operand is treated as a batch of matrices."""
    return MatMul.apply(a, b)


# ----------------------------------------------------------------------
# elementwise


def _check_binary(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_binary(a, b, self.name)
        self.sa, self.sb = a.shape, b.shape
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.sa), _unbroadcast(g, self.sb)


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_binary(a, b, self.name)
        self.sa, self.sb = a.shape, b.shape
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.sa), _unbroadcast(-g, self.sb)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_binary(a, b, self.name)
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        _check_binary(a, b, self.name)
        if np.any(b == 0):
            raise DomainError("div: division by zero")
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        a, b = self.a, self.b
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


class Pow(Function):
    name = "pow"

    def forward(self, a, b):
        _check_binary(a, b, self.name)
        non_integer = b != np.round(b)
        if np.any((a < 0) & non_integer):
            raise DomainError("pow: negative base with non-integer exponent")
        if np.any((a == 0) & (b < 0)):
            raise DomainError("pow: zero base with negative exponent")
        self.a, self.b = a, b
        self.out = np.power(a, b)
        return self.out

    def backward(self, g):
        a, b, out = self.a, self.b, self.out
        with np.errstate(divide="ignore", invalid="ignore"):
            da = np.where(b == 0, 0.0, b * np.power(a, b - 1.0))
            db = np.where(a > 0, out * np.log(np.where(a > 0, a, 1.0)), 0.0)
        return _unbroadcast(g * da, a.shape), _unbroadcast(g * db, b.shape)


class Exp(Function):
    name = "exp"

    def forward(self, a, b=None):
        with np.errstate(over="ignore"):
            self.out = np.exp(a)
        if not np.all(np.isfinite(self.out)):
            raise DomainError("exp: overflow")
        return self.out

    def backward(self, g):
        return (g * self.out,)


class Log(Function):
    name = "log"

    def forward(self, a, b=None):
        if np.any(a <= 0):
            raise DomainError("log: non-positive argument")
        self.a = a
        return np.log(a)

    def backward(self, g):
        return (g / self.a,)


class Max0(Function):
    name = "max0"

    def forward(self, a, b=None):
        # subgradient at exactly 0 is 0
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, g):
        return (g * self.mask,)


class ClampMin(Function):
    name = "clamp_min"

    def forward(self, a, lo: float = 0.0):
        self.mask = a > lo
        return np.where(self.mask, a, lo)

    def backward(self, g):
        return (g * self.mask,)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def pow(a, b) -> Tensor:  # noqa: A001 - mirrors the math name
    return Pow.apply(a, b)


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def max0(a) -> Tensor:
    return Max0.apply(a)


def clamp_min(a, lo: float) -> Tensor:
    return ClampMin.apply(a, lo=lo)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "pow": pow,
}
_UNARY = {"exp": exp, "log": log, "max0": max0}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, pow, exp, log, max0."""
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind in _ELEMENTWISE:
        if b is None:
            raise ValueError(f"{kind} needs a second operand")
        return _ELEMENTWISE[kind](a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ----------------------------------------------------------------------
# reductions


def _check_axis(a: np.ndarray, axis) -> None:
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")


def _expand(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None):
        _check_axis(a, axis)
        self.shape, self.axis = a.shape, axis
        return a.sum(axis=axis)

    def backward(self, g):
        return (np.array(_expand(g, self.shape, self.axis)),)


class Mean(Function):
    name = "mean"

    def forward(self, a, axis=None):
        _check_axis(a, axis)
        self.shape, self.axis = a.shape, axis
        self.count = a.size if axis is None else a.shape[axis]
        return a.mean(axis=axis)

    def backward(self, g):
        return (np.array(_expand(g, self.shape, self.axis)) / self.count,)


class FrobeniusNorm(Function):
    name = "frobenius_norm"

    def forward(self, a, axis=None):
        _check_axis(a, axis)
        self.a, self.axis = a, axis
        self.out = np.sqrt((a * a).sum(axis=axis))
        return self.out

    def backward(self, g):
        norm = _expand(self.out, self.a.shape, self.axis)
        gg = _expand(g, self.a.shape, self.axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            ga = np.where(norm > 0, gg * self.a / np.where(norm > 0, norm, 1.0), 0.0)
        return (ga,)


class Max(Function):
    name = "max"

    def forward(self, a, axis=None):
        _check_axis(a, axis)
        self.shape, self.axis = a.shape, axis
        if axis is None:
            self.idx = int(np.argmax(a))
            return a.reshape(-1)[self.idx]
        self.idx = np.argmax(a, axis=axis)
        return np.take_along_axis(a, np.expand_dims(self.idx, axis), axis=axis).squeeze(axis)

    def backward(self, g):
        ga = np.zeros(self.shape)
        if self.axis is None:
            ga.reshape(-1)[self.idx] = g
        else:
            np.put_along_axis(ga, np.expand_dims(self.idx, self.axis), np.expand_dims(g, self.axis), axis=self.axis)
        return (ga,)


def tsum(a, axis=None) -> Tensor:
    return Sum.apply(a, axis=axis)


def mean(a, axis=None) -> Tensor:
    return Mean.apply(a, axis=axis)


def frobenius_norm(a, axis=None) -> Tensor:
    """sqrt of the sum of squares; the gradient at an all-zero input is zero."""
    return FrobeniusNorm.apply(a, axis=axis)


def tmax(a, axis=None) -> Tensor:
    """Maximum; on ties the gradient goes to the first maximal entry."""
    return Max.apply(a, axis=axis)


_REDUCE = {"sum": tsum, "mean": mean, "frobenius_norm": frobenius_norm, "max": tmax}


def reduce(kind: str, a, axis: int | None = None) -> Tensor:
    if kind not in _REDUCE:
        raise ValueError(f"unknown reduction {kind!r}")
    return _REDUCE[kind](a, axis)


# ----------------------------------------------------------------------
# normalisations along the last axis


class SoftmaxRows(Function):
    name = "softmax_rows"

    def forward(self, a):
        if a.ndim < 1:
            raise ShapeError("softmax_rows needs at least one axis")
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        self.out = e / e.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, g):
        y = self.out
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


class LogSoftmaxRows(Function):
    name = "log_softmax_rows"

    def forward(self, a):
        if a.ndim < 1:
            raise ShapeError("log_softmax_rows needs at least one axis")
        z = a - a.max(axis=-1, keepdims=True)
        out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        self.p = np.exp(out)
        return out

    def backward(self, g):
        return (g - self.p * g.sum(axis=-1, keepdims=True),)


class L2Normalize(Function):
    name = "l2_normalize"
    EPS = 1e-12

    def forward(self, a, strict=True):
        norm = np.sqrt((a * a).sum(axis=-1, keepdims=True))
        if strict and np.any(norm <= self.EPS):
            raise DegenerateInputError("l2_normalize: vector norm below 1e-12")
        self.norm = np.maximum(norm, self.EPS)
        self.out = a / self.norm
        return self.out

    def backward(self, g):
        y = self.out
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / self.norm,)


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    return SoftmaxRows.apply(a)


def log_softmax_rows(a) -> Tensor:
    return LogSoftmaxRows.apply(a)


def l2_normalize(a, strict: bool = True) -> Tensor:
    """Scale each vector along the last axis to unit length.

    With ``strict=False`` vectors shorter than 1e-12 are divided by 1e-12
    instead of raising (an all-zero block stays zero).
    """
    return L2Normalize.apply(a, strict=strict)


# ----------------------------------------------------------------------
# shape plumbing


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a):
        if a.ndim < 2:
            raise ShapeError("transpose needs rank >= 2")
        return np.swapaxes(a, -1, -2)

    def backward(self, g):
        return (np.swapaxes(g, -1, -2),)


class BroadcastTo(Function):
    name = "broadcast_to"

    def forward(self, a, shape=()):
        self.shape = a.shape
        try:
            out = np.broadcast_to(a, shape)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None
        self.lead = len(shape) - a.ndim
        self.axes = tuple(i + self.lead for i, n in enumerate(a.shape) if n == 1 and shape[i + self.lead] != 1)
        return np.array(out)

    def backward(self, g):
        g = g.sum(axis=tuple(range(self.lead))) if self.lead else g
        if self.axes:
            g = g.sum(axis=tuple(ax - self.lead for ax in self.axes), keepdims=True)
        return (g.reshape(self.shape),)


class Take(Function):
    name = "take"

    def forward(self, a, indices=(), axis=0):
        self.shape, self.axis = a.shape, axis
        self.indices = np.asarray(indices, dtype=np.intp)
        return np.take(a, self.indices, axis=axis)

    def backward(self, g):
        ga = np.zeros(self.shape)
        moved = np.moveaxis(ga, self.axis, 0)
        np.add.at(moved, self.indices, np.moveaxis(g, self.axis, 0))
        return (ga,)


class Stack(Function):
    name = "stack"

    def forward(self, *arrays):
        if len({a.shape for a in arrays}) > 1:
            raise ShapeError("stack: all inputs must share a shape")
        return np.stack(arrays)

    def backward(self, g):
        return tuple(g[i] for i in range(g.shape[0]))


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    return Transpose.apply(a)


def broadcast_to(a, shape) -> Tensor:
    return BroadcastTo.apply(a, shape=tuple(shape))


def take(a, indices, axis: int = 0) -> Tensor:
    return Take.apply(a, indices=indices, axis=axis)


def stack(tensors: Sequence) -> Tensor:
    return Stack.apply(*tensors)


def dot(a, b) -> Tensor:
    """Inner product of two vectors."""
    return tsum(mul(a, b))


# ----------------------------------------------------------------------
# backward sweep


def _collect(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack_ = [root]
    while stack_:
        t = stack_.pop()
        if id(t) in seen or t._ctx is None:
            continue
        seen.add(id(t))
        order.append(t)
        stack_.extend(p for p in t._ctx.parents if p.requires_grad)
    order.sort(key=lambda t: t._seq, reverse=True)
    return order


def _sweep(root: Tensor) -> tuple[dict[int, np.ndarray], dict[int, Tensor], list[Tensor]]:
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise GraphError("backward root does not require grad (no graph attached)")
    nodes = _collect(root)
    for t in nodes:
        if t._ctx.consumed:
            raise GraphError("graph already consumed by a previous backward; rebuild the forward pass")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for t in nodes:
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for parent, pg in zip(t._ctx.parents, t._ctx.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if parent._ctx is None:
                leaves[pid] = parent
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = np.array(pg, dtype=np.float64).reshape(parent.shape)
    if root._ctx is None:
        leaves[id(root)] = root
    return grads, leaves, nodes


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    The graph is consumed; a second call on the same graph raises
    :class:`GraphError`.
    """
    grads, leaves, nodes = _sweep(root)
    for lid, leaf in leaves.items():
        g = grads[lid]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
    for t in nodes:
        t._ctx.consumed = True


def grad(root: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar root w.r.t. ``wrt`` without touching ``.grad``.

    The graph is left intact so a later :func:`backward` may reuse it.
    """
    grads, _, _ = _sweep(root)
    return [grads.get(id(t), np.zeros(t.shape)) for t in wrt]


# ----------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    passed: bool
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x,
    step: float = 1e-6,
    tol: float = 1e-4,
    atol: float = 0.0,
) -> GradcheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    Per coordinate the error is ``|a - n| / max(|a|, |n|, floor)``.  The floor
    is the round-off level of the difference quotient divided by ``tol``, so a
    coordinate whose derivative is indistinguishable from zero at this step
    size is judged on absolute agreement instead of dividing noise by noise.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    out = f(leaf)
    f0 = out.item()
    (analytic,) = grad(out, [leaf])
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    base = x0.reshape(-1)
    for i in range(x0.size):
        xp = base.copy()
        xm = base.copy()
        xp[i] += step
        xm[i] -= step
        with no_grad():
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
        flat[i] = (fp - fm) / (2 * step)
    noise = 4 * np.finfo(np.float64).eps * max(abs(f0), 1.0) / step
    floor = max(atol, noise / tol)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
    return GradcheckReport(err, tol, err <= tol, analytic, numeric)
