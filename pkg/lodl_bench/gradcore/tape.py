"""
Gradient Tape
Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records one computation; Tensors produced while a tape is active on the
current thread are linked to it, and ``Tape.backward`` walks the records in
reverse once. Tensors are immutable and may be shared read-only across threads.
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from lodl_bench.errors import DomainError, NumericalError, ShapeError, TapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]

_tape_ids = itertools.count(1)
_local = threading.local()


class OpKind(Enum):
    """Operations the tape knows how to differentiate."""
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    MATMUL = "matmul"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOG = "log"
    SUM = "sum"
    MEAN = "mean"
    SQUARE = "square"
    CLAMP_MIN = "clamp_min"
    RESHAPE = "reshape"
    TRANSPOSE = "transpose"
    TAKE = "take"
    STACK = "stack"


BINARY_OPS = {OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV, OpKind.MATMUL}
BROADCASTING_OPS = {OpKind.ADD, OpKind.SUB, OpKind.MUL, OpKind.DIV}


class Tensor:
    """Immutable float64 array, optionally linked to a node of a tape."""

    __slots__ = ("_data", "node_id", "tape_id", "requires_grad")

    def __init__(self, data: Any, node_id: Optional[int] = None,
                 tape_id: Optional[int] = None, requires_grad: bool = False):
        """Initialize a tensor from array-like data (always copied to float64)."""
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self._data = array
        self.node_id = node_id
        self.tape_id = tape_id
        self.requires_grad = requires_grad

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self._data)

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self._data.reshape(()))

    def __repr__(self) -> str:
        linked = f", node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{linked})"

    # Operator sugar; the named functions in gradcore.ops are the public API.

    def __add__(self, other):
        return apply(OpKind.ADD, self, other)

    def __radd__(self, other):
        return apply(OpKind.ADD, other, self)

    def __sub__(self, other):
        return apply(OpKind.SUB, self, other)

    def __rsub__(self, other):
        return apply(OpKind.SUB, other, self)

    def __mul__(self, other):
        return apply(OpKind.MUL, self, other)

    def __rmul__(self, other):
        return apply(OpKind.MUL, other, self)

    def __truediv__(self, other):
        return apply(OpKind.DIV, self, other)

    def __rtruediv__(self, other):
        return apply(OpKind.DIV, other, self)

    def __neg__(self):
        return apply(OpKind.NEG, self)

    def __matmul__(self, other):
        return apply(OpKind.MATMUL, self, other)

    def __rmatmul__(self, other):
        return apply(OpKind.MATMUL, other, self)


@dataclass
class TapeNode:
    """One recorded op: its kind, its inputs and what the backward rule needs."""
    node_id: int
    op: OpKind
    input_ids: Tuple[Optional[int], ...]
    input_shapes: Tuple[Tuple[int, ...], ...]
    cache: Dict[str, Any] = field(default_factory=dict)


class GradientMap(dict):
    """Mapping from node id to gradient Tensor, with lookup by leaf Tensor."""

    def wrt(self, tensor: Tensor) -> Tensor:
        """Gradient with respect to a leaf returned by ``Tape.watch``."""
        if tensor.node_id not in self:
            raise TapeError(f"no gradient recorded for {tensor!r}")
        return self[tensor.node_id]

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node_id
        return super().__getitem__(key)


class Tape:
    """Single-use recording of one computation."""

    def __init__(self):
        """Initialize an empty tape."""
        self.tape_id = next(_tape_ids)
        self.nodes: List[TapeNode] = []
        self.leaves: Dict[int, Tuple[int, ...]] = {}
        self.consumed = False
        self._thread = None

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        self._thread = threading.get_ident()
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def _next_id(self) -> int:
        return len(self.nodes) + len(self.leaves)

    def watch(self, value: ArrayLike, requires_grad: bool = True) -> Tensor:
        """Register a leaf tensor on this tape."""
        self._check_usable()
        data = value.data if isinstance(value, Tensor) else value
        node_id = self._next_id()
        leaf = Tensor(data, node_id=node_id, tape_id=self.tape_id, requires_grad=requires_grad)
        self.leaves[node_id] = leaf.shape if requires_grad else None
        return leaf

    def record(self, op: OpKind, inputs: Sequence[Tensor], cache: Dict[str, Any]) -> int:
        self._check_usable()
        node_id = self._next_id()
        input_ids = tuple(t.node_id if t.tape_id == self.tape_id else None for t in inputs)
        self.nodes.append(TapeNode(node_id=node_id, op=op, input_ids=input_ids,
                                   input_shapes=tuple(t.shape for t in inputs), cache=cache))
        return node_id

    def _check_usable(self):
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        if self._thread is not None and self._thread != threading.get_ident():
            raise TapeError("tape used from a thread other than the one that opened it")

    def backward(self, root: Tensor) -> GradientMap:
        """Return d(root)/d(leaf) for every leaf that requires gradients. Consumes the tape."""
        if self.consumed:
            raise TapeError("backward() called twice on one tape")
        if root.size != 1:
            raise TapeError(f"backward() needs a scalar root, got shape {root.shape}")
        self.consumed = True

        grads: Dict[int, np.ndarray] = {}
        if root.tape_id == self.tape_id and root.node_id is not None:
            grads[root.node_id] = np.ones(root.shape, dtype=np.float64)

        for node in reversed(self.nodes):
            upstream = grads.pop(node.node_id, None)
            if upstream is None:
                continue
            for input_id, grad in zip(node.input_ids, _backward_rule(node, upstream)):
                if input_id is None or grad is None:
                    continue
                if input_id in grads:
                    grads[input_id] = grads[input_id] + grad
                else:
                    grads[input_id] = grad

        result = GradientMap()
        for leaf_id, shape in self.leaves.items():
            if shape is None:
                continue
            result[leaf_id] = Tensor(grads.get(leaf_id, np.zeros(shape)))
        return result


def _tape_stack() -> List[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    """The innermost tape opened on this thread, if recording is enabled."""
    if getattr(_local, "paused", 0):
        return None
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_record() -> Iterator[None]:
    """Evaluate ops without recording them on the active tape."""
    _local.paused = getattr(_local, "paused", 0) + 1
    try:
        yield
    finally:
        _local.paused -= 1


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# === Forward rules ===

def _broadcast_shape(op: OpKind, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if a == b[1:]:
        return b
    if b == a[1:]:
        return a
    raise ShapeError(op.value, a, b)


def _matmul_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
    if not (1 <= len(a) <= 2 and 1 <= len(b) <= 2) or a[-1] != b[0]:
        raise ShapeError(OpKind.MATMUL.value, a, b)


def _forward(op: OpKind, inputs: Sequence[Tensor], params: Dict[str, Any]) -> Tuple[np.ndarray, Dict[str, Any]]:
    x = inputs[0].data
    cache: Dict[str, Any] = {}

    if op in BROADCASTING_OPS:
        y = inputs[1].data
        _broadcast_shape(op, x.shape, y.shape)
        cache.update(a=x, b=y)
        if op is OpKind.ADD:
            return x + y, cache
        if op is OpKind.SUB:
            return x - y, cache
        if op is OpKind.MUL:
            return x * y, cache
        if np.any(y == 0):
            raise DomainError(f"div: zero in denominator of shape {y.shape}")
        return x / y, cache

    if op is OpKind.MATMUL:
        y = inputs[1].data
        _matmul_shape(x.shape, y.shape)
        cache.update(a=x, b=y)
        return np.matmul(x, y), cache
    if op is OpKind.NEG:
        return -x, cache
    if op is OpKind.RELU:
        cache["mask"] = x > 0
        return np.where(cache["mask"], x, 0.0), cache
    if op is OpKind.TANH:
        out = np.tanh(x)
        cache["out"] = out
        return out, cache
    if op is OpKind.SIGMOID:
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        cache["out"] = out
        return out, cache
    if op is OpKind.EXP:
        out = np.exp(x)
        cache["out"] = out
        return out, cache
    if op is OpKind.LOG:
        if np.any(x <= 0):
            raise DomainError(f"log: non-positive input (min {float(np.min(x))!r})")
        cache["a"] = x
        return np.log(x), cache
    if op in (OpKind.SUM, OpKind.MEAN):
        axis = params.get("axis")
        if axis is not None and not -x.ndim <= axis < x.ndim:
            raise ShapeError(op.value, x.shape)
        cache.update(axis=axis, shape=x.shape)
        reduce = np.sum if op is OpKind.SUM else np.mean
        return np.asarray(reduce(x, axis=axis)), cache
    if op is OpKind.SQUARE:
        cache["a"] = x
        return x * x, cache
    if op is OpKind.CLAMP_MIN:
        floor = float(params.get("floor", 0.0))
        cache["mask"] = x > floor
        return np.where(cache["mask"], x, floor), cache
    if op is OpKind.RESHAPE:
        shape = tuple(params["shape"])
        try:
            out = x.reshape(shape)
        except ValueError:
            raise ShapeError(op.value, x.shape, shape)
        cache["shape"] = x.shape
        return out, cache
    if op is OpKind.TRANSPOSE:
        if x.ndim != 2:
            raise ShapeError(op.value, x.shape)
        return x.T, cache
    if op is OpKind.TAKE:
        index = params["index"]
        axis = params.get("axis", 0)
        if x.ndim == 0:
            raise ShapeError(op.value, x.shape)
        cache.update(index=index, axis=axis, shape=x.shape)
        return np.take(x, index, axis=axis), cache
    if op is OpKind.STACK:
        shapes = {t.shape for t in inputs}
        if len(shapes) != 1:
            raise ShapeError(op.value, *[t.shape for t in inputs])
        cache["count"] = len(inputs)
        return np.stack([t.data for t in inputs]), cache
    raise TapeError(f"unsupported op {op}")


def apply(op: OpKind, *inputs: ArrayLike, **params) -> Tensor:
    """Evaluate one op and record it on the active tape when any input is linked to it."""
    tensors = [as_tensor(t) for t in inputs]
    if op in BINARY_OPS and len(tensors) != 2:
        raise TapeError(f"{op.value} takes two inputs, got {len(tensors)}")
    if op is not OpKind.STACK and op not in BINARY_OPS and len(tensors) != 1:
        raise TapeError(f"{op.value} takes one input, got {len(tensors)}")

    out, cache = _forward(op, tensors, params)
    if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(t.data)) for t in tensors):
        raise NumericalError(f"{op.value} produced a non-finite value from finite inputs")

    tape = active_tape()
    if tape is not None and any(t.tape_id == tape.tape_id for t in tensors):
        node_id = tape.record(op, tensors, cache)
        return Tensor(out, node_id=node_id, tape_id=tape.tape_id)
    return Tensor(out)


# === Backward rules ===

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


def _backward_rule(node: TapeNode, g: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
    op, c = node.op, node.cache
    shapes = node.input_shapes

    if op is OpKind.ADD:
        return _unbroadcast(g, shapes[0]), _unbroadcast(g, shapes[1])
    if op is OpKind.SUB:
        return _unbroadcast(g, shapes[0]), _unbroadcast(-g, shapes[1])
    if op is OpKind.MUL:
        return _unbroadcast(g * c["b"], shapes[0]), _unbroadcast(g * c["a"], shapes[1])
    if op is OpKind.DIV:
        a, b = c["a"], c["b"]
        return _unbroadcast(g / b, shapes[0]), _unbroadcast(-g * a / (b * b), shapes[1])
    if op is OpKind.MATMUL:
        a, b = c["a"], c["b"]
        if a.ndim == 1 and b.ndim == 1:
            return g * b, g * a
        if a.ndim == 1:
            return b @ g, np.outer(a, g)
        if b.ndim == 1:
            return np.outer(g, b), a.T @ g
        return g @ b.T, a.T @ g
    if op is OpKind.NEG:
        return (-g,)
    if op in (OpKind.RELU, OpKind.CLAMP_MIN):
        return (np.where(c["mask"], g, 0.0),)
    if op is OpKind.TANH:
        return (g * (1.0 - c["out"] ** 2),)
    if op is OpKind.SIGMOID:
        return (g * c["out"] * (1.0 - c["out"]),)
    if op is OpKind.EXP:
        return (g * c["out"],)
    if op is OpKind.LOG:
        return (g / c["a"],)
    if op in (OpKind.SUM, OpKind.MEAN):
        shape, axis = c["shape"], c["axis"]
        grad = g if axis is None else np.expand_dims(g, axis)
        grad = np.broadcast_to(grad, shape).astype(np.float64)
        if op is OpKind.MEAN:
            count = int(np.prod(shape)) if axis is None else shape[axis]
            grad = grad / count
        return (grad,)
    if op is OpKind.SQUARE:
        return (2.0 * c["a"] * g,)
    if op is OpKind.RESHAPE:
        return (g.reshape(c["shape"]),)
    if op is OpKind.TRANSPOSE:
        return (g.T,)
    if op is OpKind.TAKE:
        grad = np.zeros(c["shape"])
        index = [slice(None)] * len(c["shape"])
        index[c["axis"]] = c["index"]
        np.add.at(grad, tuple(index), g)
        return (grad,)
    if op is OpKind.STACK:
        return tuple(g[i] for i in range(c["count"]))
    raise TapeError(f"no backward rule for {op}")
