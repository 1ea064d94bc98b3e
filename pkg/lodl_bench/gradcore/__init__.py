"""
Gradcore
Minimal reverse-mode automatic differentiation over float64 arrays.
"""

from lodl_bench.gradcore.tape import (
    GradientMap, OpKind, Tape, TapeNode, Tensor, active_tape, apply, as_tensor, no_record,
)
from lodl_bench.gradcore import ops
from lodl_bench.gradcore.checks import finite_diff_check
from lodl_bench.gradcore.layers import DenseStack, init_uniform


def backward(tape: Tape, root: Tensor) -> GradientMap:
    """Run the backward pass of ``tape`` from ``root``."""
    return tape.backward(root)


__all__ = [
    "GradientMap", "OpKind", "Tape", "TapeNode", "Tensor", "active_tape", "apply",
    "as_tensor", "no_record", "ops", "finite_diff_check", "DenseStack", "init_uniform",
    "backward",
]
