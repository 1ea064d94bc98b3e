"""
Pick-Min Toy Problem
Choose the option with the lowest predicted disutility; the true disutility of the choice is the loss.
"""

import numpy as np

from lodl_bench.domains.base import DecisionProblem
from lodl_bench.gradcore import Tensor, as_tensor, ops


class PickMinProblem(DecisionProblem):
    """Argmin over a handful of options. DL is piecewise constant, so its gradient is zero almost everywhere."""

    name = "pickmin"
    is_maximization = False

    def __init__(self, n_options: int = 2, temperature: float = 0.1):
        """Initialize the problem."""
        super().__init__(dim_y=n_options)
        self.temperature = temperature

    def _solve(self, y_hat: np.ndarray) -> np.ndarray:
        z = np.zeros(self.dim_y)
        z[int(np.argmin(y_hat))] = 1.0
        return z

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(np.asarray(z).reshape(-1), np.asarray(y).reshape(-1)))

    def _surrogate(self, y_hat: Tensor) -> Tensor:
        y_hat = as_tensor(y_hat)
        if y_hat.ndim == 1:
            y_hat = ops.reshape(y_hat, (1, y_hat.shape[0]))
        logits = ops.mul(y_hat, -1.0 / self.temperature)
        log_norm = ops.logsumexp(logits, axis=1)
        return ops.exp(ops.sub(logits, ops.expand_columns(ops.reshape(log_norm, (-1, 1)), self.dim_y)))

    def surrogate_objective(self, z: Tensor, y: np.ndarray) -> Tensor:
        return ops.batch_dot(z, np.asarray(y).reshape(z.shape))

    def random_predictions(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(count, self.dim_y))
