"""
Web Advertising Domain
Choose B of M websites to maximize expected unique clicks over N users.
"""

import itertools
import logging
from typing import List, Tuple

import numpy as np

from lodl_bench.domains.base import DecisionProblem, Dataset, DomainConfig, InstanceRecord, split_sizes
from lodl_bench.errors import NumericalError, OracleError
from lodl_bench.gradcore import Tensor, as_tensor, ops

logger = logging.getLogger(__name__)

CTR_SCALE = 0.2
ENUMERATION_LIMIT = 20
MULTILINEAR_STEPS = 50
MULTILINEAR_STEP_SIZE = 0.5
TIE_TOLERANCE = 1e-12


def synthetic_ctrs(rng: np.random.Generator, n_websites: int, n_users: int) -> np.ndarray:
    """y_ij = u_i * v_j * 0.2 with website quality u and user propensity v ~ U[0.5, 1]."""
    quality = rng.uniform(0.5, 1.0, size=n_websites)
    propensity = rng.uniform(0.5, 1.0, size=n_users)
    return np.outer(quality, propensity) * CTR_SCALE


def gen_webadv_dataset(cfg: DomainConfig) -> Dataset:
    """CTR matrices scrambled into features by one shared random matrix: x_m = A y_m."""
    rng = np.random.default_rng(cfg.seed)
    scramble = rng.standard_normal((cfg.n_users, cfg.n_users)) / np.sqrt(cfg.n_users)
    splits = {}
    next_id = 0
    for split, size in split_sizes(cfg):
        records = []
        for _ in range(size):
            ctrs = synthetic_ctrs(rng, cfg.n_websites, cfg.n_users)
            features = ctrs @ scramble.T
            records.append(InstanceRecord(instance_id=next_id, split=split,
                                          features=features, y_true=ctrs.reshape(-1)))
            next_id += 1
        splits[split] = records
    logger.info(f"Generated webadv dataset: M={cfg.n_websites}, N={cfg.n_users}, seed {cfg.seed}")
    return Dataset(config=cfg, splits=splits, extras={"scramble": scramble})


def webadv_objective(z: np.ndarray, y: np.ndarray) -> float:
    """(1/N) * sum_j [1 - prod_i (1 - z_i y_ij)]"""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if y.ndim == 1:
        y = y.reshape(z.size, -1)
    if np.any(y < 0) or np.any(y > 1):
        raise ValueError("click-through rates must lie in [0, 1]")
    miss = np.prod(1.0 - z[:, None] * y, axis=0)
    return float(np.mean(1.0 - miss))


def enumerate_subsets(n_websites: int, budget: int) -> List[Tuple[int, ...]]:
    return list(itertools.combinations(range(n_websites), budget))


def webadv_oracle(y_hat: np.ndarray, budget: int) -> Tuple[int, ...]:
    """Exact best subset of size B by enumeration; ties go to the lexicographically smallest."""
    y_hat = np.clip(np.asarray(y_hat, dtype=np.float64), 0.0, 1.0)
    n_websites = y_hat.shape[0]
    if n_websites > ENUMERATION_LIMIT:
        raise OracleError(f"{n_websites} websites exceeds the enumeration limit of {ENUMERATION_LIMIT}")
    if not 1 <= budget <= n_websites:
        raise OracleError(f"budget {budget} out of range for {n_websites} websites")

    best, best_value = None, -np.inf
    z = np.zeros(n_websites)
    for subset in enumerate_subsets(n_websites, budget):
        z[:] = 0.0
        z[list(subset)] = 1.0
        value = webadv_objective(z, y_hat)
        if value > best_value + TIE_TOLERANCE:
            best, best_value = subset, value
    return best


def _miss_terms(z: Tensor, ctrs: List[Tensor], n_users: int) -> List[Tensor]:
    """1 - z_i * y_i for every website, each (B, N)."""
    terms = []
    for i, row in enumerate(ctrs):
        z_i = ops.expand_columns(ops.take(z, [i], axis=1), n_users)
        terms.append(ops.sub(1.0, ops.mul(z_i, row)))
    return terms


def _product(tensors: List[Tensor]) -> Tensor:
    out = tensors[0]
    for t in tensors[1:]:
        out = ops.mul(out, t)
    return out


def _split_websites(y_hat: Tensor, n_websites: int) -> List[Tensor]:
    n_users = y_hat.shape[1] // n_websites
    return [ops.take(y_hat, list(range(i * n_users, (i + 1) * n_users)), axis=1) for i in range(n_websites)]


def project_budget(z: Tensor, budget: float) -> Tensor:
    """Clamp to [0,1], then scale rows whose sum exceeds the budget back onto it."""
    z = ops.clamp(z, 0.0, 1.0)
    width = z.shape[1]
    totals = ops.row_sums(z)
    scale = ops.div(float(budget), ops.add(float(budget), ops.clamp_min(ops.sub(totals, float(budget)), 0.0)))
    return ops.mul(z, ops.expand_columns(scale, width))


def webadv_multilinear_surrogate(y_hat, n_websites: int, budget: float,
                                 steps: int = MULTILINEAR_STEPS,
                                 step_size: float = MULTILINEAR_STEP_SIZE) -> Tensor:
    """Unrolled projected gradient ascent on the multilinear extension, for a (B, M*N) batch."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    y_hat = as_tensor(y_hat)
    single = y_hat.ndim == 1
    if single:
        y_hat = ops.reshape(y_hat, (1, y_hat.shape[0]))
    batch = y_hat.shape[0]
    n_users = y_hat.shape[1] // n_websites
    ctrs = _split_websites(ops.clamp(y_hat, 0.0, 1.0), n_websites)

    z = Tensor(np.full((batch, n_websites), float(budget) / n_websites))
    for step in range(steps):
        terms = _miss_terms(z, ctrs, n_users)
        grads = []
        for i in range(n_websites):
            others = terms[:i] + terms[i + 1:]
            leave_one_out = _product(others) if others else Tensor(np.ones((batch, n_users)))
            grads.append(ops.mean(ops.mul(ctrs[i], leave_one_out), axis=1))
        gradient = ops.transpose(ops.stack(grads))
        z = project_budget(ops.add(z, ops.mul(gradient, step_size)), budget)
        if not np.all(np.isfinite(z.data)):
            raise NumericalError("multilinear ascent produced a non-finite iterate", step=step)

    if single:
        z = ops.reshape(z, (n_websites,))
    return z


def multilinear_value(z: Tensor, y: np.ndarray, n_websites: int) -> Tensor:
    """Batched multilinear extension F(z; y) -> (B,)."""
    y = np.asarray(y, dtype=np.float64).reshape(z.shape[0], -1)
    n_users = y.shape[1] // n_websites
    rows = [Tensor(y[:, i * n_users:(i + 1) * n_users]) for i in range(n_websites)]
    miss = _product(_miss_terms(z, rows, n_users))
    return ops.mean(ops.sub(1.0, miss), axis=1)


class WebAdvProblem(DecisionProblem):
    """Budgeted website selection under a probabilistic-coverage objective."""

    name = "webadv"
    is_maximization = True

    def __init__(self, n_websites: int, n_users: int, budget: int,
                 steps: int = MULTILINEAR_STEPS, step_size: float = MULTILINEAR_STEP_SIZE):
        """Initialize the problem."""
        super().__init__(dim_y=n_websites * n_users)
        self.n_websites = n_websites
        self.n_users = n_users
        self.budget = budget
        self.steps = steps
        self.step_size = step_size

    @classmethod
    def from_config(cls, cfg: DomainConfig) -> "WebAdvProblem":
        return cls(n_websites=cfg.n_websites, n_users=cfg.n_users, budget=cfg.budget)

    def _solve(self, y_hat: np.ndarray) -> np.ndarray:
        z = np.zeros(self.n_websites)
        z[list(webadv_oracle(y_hat.reshape(self.n_websites, self.n_users), self.budget))] = 1.0
        return z

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        return webadv_objective(z, np.asarray(y).reshape(self.n_websites, self.n_users))

    def _surrogate(self, y_hat: Tensor) -> Tensor:
        return webadv_multilinear_surrogate(y_hat, self.n_websites, self.budget, self.steps, self.step_size)

    def surrogate_objective(self, z: Tensor, y: np.ndarray) -> Tensor:
        return multilinear_value(z, y, self.n_websites)

    def random_predictions(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(count, self.dim_y))
