"""
Linear Top-K Domain
Pick the B resources with the highest cubic utility; soft top-k via unrolled Sinkhorn.
"""

import logging
from typing import Tuple

import numpy as np

from lodl_bench.domains.base import DecisionProblem, Dataset, DomainConfig, InstanceRecord, split_sizes
from lodl_bench.errors import NumericalError, OracleError
from lodl_bench.gradcore import Tensor, as_tensor, ops

logger = logging.getLogger(__name__)

SINKHORN_EPSILON = 0.1
SINKHORN_ITERS = 100


def cubic_utility(x: np.ndarray) -> np.ndarray:
    """y = 10x^3 - 6.5x"""
    x = np.asarray(x, dtype=np.float64)
    return 10.0 * x ** 3 - 6.5 * x


def gen_linear_dataset(cfg: DomainConfig) -> Dataset:
    """Features x ~ U[0,1] per resource, labels from the cubic utility."""
    rng = np.random.default_rng(cfg.seed)
    splits = {}
    next_id = 0
    for split, size in split_sizes(cfg):
        records = []
        for _ in range(size):
            x = rng.uniform(0.0, 1.0, size=cfg.n_items)
            records.append(InstanceRecord(instance_id=next_id, split=split,
                                          features=x.reshape(-1, 1), y_true=cubic_utility(x)))
            next_id += 1
        splits[split] = records
    logger.info(f"Generated linear dataset: {cfg.n_train}/{cfg.n_val}/{cfg.n_test} instances, seed {cfg.seed}")
    return Dataset(config=cfg, splits=splits)


def topk_oracle(y_hat: np.ndarray, budget: int) -> Tuple[int, ...]:
    """Indices of the ``budget`` largest entries, ties to the lowest index, in ascending order."""
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if not 1 <= budget <= y_hat.size:
        raise OracleError(f"budget {budget} out of range for {y_hat.size} items")
    order = np.argsort(-y_hat, kind="stable")
    return tuple(sorted(int(i) for i in order[:budget]))


def _lse2(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise log(exp(a) + exp(b)) with a constant shift."""
    shift = np.maximum(a.data, b.data)
    return ops.add(ops.log(ops.add(ops.exp(ops.sub(a, shift)), ops.exp(ops.sub(b, shift)))), shift)


def soft_topk_surrogate(y_hat, budget: int, epsilon: float = SINKHORN_EPSILON,
                        iters: int = SINKHORN_ITERS) -> Tensor:
    """Entropic optimal transport of the scores onto the anchors {0, 1} with masses (n-B)/n and B/n.

    Works in log space on a (B, n) batch or a single (n,) vector and returns n times the
    mass transported to the "selected" anchor, which sums to ``budget`` per row.
    """
    if epsilon <= 0:
        raise ValueError(f"temperature must be positive, got {epsilon}")
    if iters < 1:
        raise ValueError(f"iterations must be at least 1, got {iters}")
    scores = as_tensor(y_hat)
    single = scores.ndim == 1
    if single:
        scores = ops.reshape(scores, (1, scores.shape[0]))
    batch, n = scores.shape
    if not 1 <= budget < n:
        raise OracleError(f"soft top-k needs 1 <= B < {n}, got {budget}")

    s = ops.mul(scores, 1.0 / epsilon)
    log_mu = -np.log(n)
    log_nu_off = np.log((n - budget) / n)
    log_nu_on = np.log(budget / n)
    g_off = Tensor(np.zeros((batch, 1)))
    g_on = Tensor(np.zeros((batch, 1)))

    for step in range(iters):
        f = ops.sub(log_mu, _lse2(ops.expand_columns(g_off, n), ops.add(ops.expand_columns(g_on, n), s)))
        g_off = ops.reshape(ops.sub(log_nu_off, ops.logsumexp(f, axis=1)), (batch, 1))
        g_on = ops.reshape(ops.sub(log_nu_on, ops.logsumexp(ops.add(f, s), axis=1)), (batch, 1))
        if not np.all(np.isfinite(g_on.data)):
            raise NumericalError("soft top-k produced a non-finite potential", step=step)

    plan_on = ops.exp(ops.add(ops.add(f, s), ops.expand_columns(g_on, n)))
    out = ops.mul(plan_on, float(n))
    if single:
        out = ops.reshape(out, (n,))
    return out


class TopKProblem(DecisionProblem):
    """Choose B of n resources; decision quality is the total true utility chosen."""

    name = "linear"
    is_maximization = True

    def __init__(self, n_items: int, budget: int, epsilon: float = SINKHORN_EPSILON,
                 iters: int = SINKHORN_ITERS):
        """Initialize the problem."""
        super().__init__(dim_y=n_items)
        self.budget = budget
        self.epsilon = epsilon
        self.iters = iters

    @classmethod
    def from_config(cls, cfg: DomainConfig) -> "TopKProblem":
        return cls(n_items=cfg.n_items, budget=cfg.budget)

    def _solve(self, y_hat: np.ndarray) -> np.ndarray:
        z = np.zeros(self.dim_y)
        z[list(topk_oracle(y_hat, self.budget))] = 1.0
        return z

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        return float(np.dot(np.asarray(z).reshape(-1), np.asarray(y).reshape(-1)))

    def _surrogate(self, y_hat: Tensor) -> Tensor:
        return soft_topk_surrogate(y_hat, self.budget, self.epsilon, self.iters)

    def surrogate_objective(self, z: Tensor, y: np.ndarray) -> Tensor:
        return ops.batch_dot(z, np.asarray(y).reshape(z.shape))

    def random_predictions(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(count, self.dim_y))
