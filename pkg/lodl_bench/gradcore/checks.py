"""
Gradient Checks
Central-difference verification of tape gradients.
"""

from typing import Callable

import numpy as np

from lodl_bench.gradcore.tape import ArrayLike, Tape, Tensor, as_tensor, no_record


def finite_diff_check(f: Callable[[Tensor], Tensor], x: ArrayLike, h: float = 1e-5) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|)."""
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    point = as_tensor(x).numpy()

    with Tape() as tape:
        leaf = tape.watch(point)
        root = f(leaf)
        analytic = tape.backward(root)[leaf].data.reshape(-1)

    numeric = np.zeros(point.size)
    flat = point.reshape(-1)
    with no_record():
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += h
            minus[i] -= h
            f_plus = f(Tensor(plus.reshape(point.shape))).item()
            f_minus = f(Tensor(minus.reshape(point.shape))).item()
            numeric[i] = (f_plus - f_minus) / (2.0 * h)

    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
