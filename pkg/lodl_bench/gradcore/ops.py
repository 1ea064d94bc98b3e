"""
Gradient Ops
Named entry points for every differentiable op, plus a few composites built from them.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from lodl_bench.gradcore.tape import ArrayLike, OpKind, Tensor, apply, as_tensor, no_record


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply(OpKind.ADD, a, b)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply(OpKind.SUB, a, b)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product."""
    return apply(OpKind.MUL, a, b)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply(OpKind.DIV, a, b)


def neg(a: ArrayLike) -> Tensor:
    return apply(OpKind.NEG, a)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return apply(OpKind.MATMUL, a, b)


def relu(a: ArrayLike) -> Tensor:
    return apply(OpKind.RELU, a)


def tanh(a: ArrayLike) -> Tensor:
    return apply(OpKind.TANH, a)


def sigmoid(a: ArrayLike) -> Tensor:
    return apply(OpKind.SIGMOID, a)


def exp(a: ArrayLike) -> Tensor:
    return apply(OpKind.EXP, a)


def log(a: ArrayLike) -> Tensor:
    return apply(OpKind.LOG, a)


def sum(a: ArrayLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    return apply(OpKind.SUM, a, axis=axis)


def mean(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    return apply(OpKind.MEAN, a, axis=axis)


def square(a: ArrayLike) -> Tensor:
    return apply(OpKind.SQUARE, a)


def clamp_min(a: ArrayLike, floor: float = 0.0) -> Tensor:
    """max(a, floor); zero gradient at and below the floor."""
    return apply(OpKind.CLAMP_MIN, a, floor=floor)


def clamp_max(a: ArrayLike, ceiling: float) -> Tensor:
    """min(a, ceiling), written as ceiling - max(ceiling - a, 0)."""
    return sub(ceiling, clamp_min(sub(ceiling, a), 0.0))


def clamp(a: ArrayLike, low: float, high: float) -> Tensor:
    return clamp_max(clamp_min(a, low), high)


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    return apply(OpKind.RESHAPE, a, shape=tuple(shape))


def transpose(a: ArrayLike) -> Tensor:
    return apply(OpKind.TRANSPOSE, a)


def take(a: ArrayLike, index, axis: int = 0) -> Tensor:
    """Select entries along an axis (an int drops the axis, a list keeps it)."""
    return apply(OpKind.TAKE, a, index=index, axis=axis)


def stack(tensors: Sequence[ArrayLike]) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    return apply(OpKind.STACK, *tensors)


def constant(value: ArrayLike) -> Tensor:
    """A tensor that never carries gradients."""
    return Tensor(as_tensor(value).data)


# === Composites ===

def row_sums(a: ArrayLike) -> Tensor:
    """Sum over the last axis, keeping it as a column: (B, n) -> (B, 1)."""
    a = as_tensor(a)
    return matmul(a, np.ones((a.shape[-1], 1)))


def expand_columns(column: ArrayLike, width: int) -> Tensor:
    """Repeat a (B, 1) column into (B, width)."""
    return matmul(column, np.ones((1, width)))


def logsumexp(a: ArrayLike, axis: int = -1) -> Tensor:
    """Stable log(sum(exp(a))) along an axis; the shift is a constant so gradients are exact."""
    a = as_tensor(a)
    with no_record():
        shift = np.max(a.data, axis=axis, keepdims=True)
    axis = axis % a.ndim
    if a.ndim == 2 and axis == 1:
        shifted = sub(a, expand_columns(shift, a.shape[1]))
        reduced = log(sum(exp(shifted), axis=1))
        return add(reduced, shift.reshape(-1))
    if a.ndim == 2 and axis == 0:
        shifted = sub(a, shift.reshape(-1))
        return add(log(sum(exp(shifted), axis=0)), shift.reshape(-1))
    if a.ndim == 1:
        shifted = sub(a, float(shift.reshape(())))
        return add(log(sum(exp(shifted))), float(shift.reshape(())))
    raise ValueError(f"logsumexp supports 1-D and 2-D tensors, got shape {a.shape}")


def batch_dot(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Row-wise inner products of two (B, n) tensors -> (B,)."""
    a, b = as_tensor(a), as_tensor(b)
    return sum(mul(a, b), axis=-1)


def shape_of(a: ArrayLike) -> Tuple[int, ...]:
    return as_tensor(a).shape
