"""
Portfolio Domain
Risk-penalized allocation over a capped simplex, with a synthetic factor-model market.
"""

import logging
from typing import Tuple

import numpy as np

from lodl_bench.domains.base import DecisionProblem, Dataset, DomainConfig, InstanceRecord, split_sizes
from lodl_bench.errors import NumericalError, OracleError
from lodl_bench.gradcore import Tensor, as_tensor, ops

logger = logging.getLogger(__name__)

N_FACTORS = 5
WINDOW = 20
FACTOR_VOL = 0.02
IDIOSYNCRATIC_VOL = 0.008
MOMENTUM = 0.5
LABEL_SCALE = 10.0
PSD_FLOOR = 1e-8

KKT_TOLERANCE = 1e-8
KKT_ERROR = 1e-6
MAX_ITERATIONS = 10000
UNROLL_STEPS = 200


# === Market generation ===

def factor_assignment(n_stocks: int) -> np.ndarray:
    """Stock i loads on latent factor i mod 5."""
    return np.arange(n_stocks) % N_FACTORS


def simulate_returns(rng: np.random.Generator, n_stocks: int, n_steps: int) -> np.ndarray:
    """Log returns (n_steps, n_stocks): AR(1) latent factors plus idiosyncratic noise."""
    factors = np.zeros((n_steps, N_FACTORS))
    shocks = rng.standard_normal((n_steps, N_FACTORS)) * FACTOR_VOL * np.sqrt(1.0 - MOMENTUM ** 2)
    factors[0] = rng.standard_normal(N_FACTORS) * FACTOR_VOL
    for t in range(1, n_steps):
        factors[t] = MOMENTUM * factors[t - 1] + shocks[t]
    idiosyncratic = rng.standard_normal((n_steps, n_stocks)) * IDIOSYNCRATIC_VOL
    return factors[:, factor_assignment(n_stocks)] + idiosyncratic


def correlation_matrix(returns: np.ndarray) -> np.ndarray:
    """Empirical correlation, symmetrized and shifted to be PSD."""
    q = np.corrcoef(returns, rowvar=False)
    q = 0.5 * (q + q.T)
    lowest = float(np.linalg.eigvalsh(q)[0])
    shift = max(0.0, -lowest + PSD_FLOOR)
    if shift > 0:
        q = q + shift * np.eye(q.shape[0])
    return q


def gen_portfolio_dataset(cfg: DomainConfig) -> Dataset:
    """Per-timestep features (20 past returns + volume proxy per stock) and next-step price moves."""
    rng = np.random.default_rng(cfg.seed)
    total = cfg.n_train + cfg.n_val + cfg.n_test
    returns = simulate_returns(rng, cfg.n_items, total + WINDOW + 1)
    prices = 100.0 * np.exp(np.cumsum(returns, axis=0))
    turnover = rng.uniform(0.5, 1.5, size=cfg.n_items)
    volume = np.log1p(turnover * np.abs(returns) * 100.0)

    splits = {}
    t = WINDOW
    next_id = 0
    for split, size in split_sizes(cfg):
        records = []
        for _ in range(size):
            window = returns[t - WINDOW + 1:t + 1].T * LABEL_SCALE
            features = np.concatenate([window, volume[t][:, None]], axis=1)
            y = LABEL_SCALE * (prices[t + 1] / prices[t] - 1.0)
            records.append(InstanceRecord(instance_id=next_id, split=split, features=features, y_true=y))
            next_id += 1
            t += 1
        splits[split] = records

    q = correlation_matrix(returns[:WINDOW + cfg.n_train + 1])
    logger.info(f"Generated portfolio dataset: {cfg.n_items} stocks, {total} timesteps, seed {cfg.seed}")
    return Dataset(config=cfg, splits=splits, extras={"Q": q})


# === Projections ===

def project_simplex(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Euclidean projection onto {z >= 0, sum z = 1}; also returns the active mask."""
    u = np.sort(v)[::-1]
    cumulative = np.cumsum(u) - 1.0
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - cumulative / ranks > 0)[0][-1]
    tau = cumulative[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0), v > tau


def project_capped_simplex(v: np.ndarray) -> np.ndarray:
    """Projection onto {0 <= z <= 1, sum z <= 1}."""
    boxed = np.clip(v, 0.0, 1.0)
    if boxed.sum() <= 1.0:
        return boxed
    projected, _ = project_simplex(v)
    return projected


def project_capped_simplex_tape(v: Tensor) -> Tensor:
    """Batched projection recorded on the tape; active sets are fixed by the forward values."""
    values = v.data
    batch, width = values.shape
    boxed_rows = (np.clip(values, 0.0, 1.0).sum(axis=1, keepdims=True) <= 1.0).astype(np.float64)

    descending = -np.sort(-values, axis=1)
    cumulative = np.cumsum(descending, axis=1) - 1.0
    ranks = np.arange(1, width + 1)
    positive = descending - cumulative / ranks > 0
    rho = width - 1 - np.argmax(positive[:, ::-1], axis=1)
    thresholds = cumulative[np.arange(batch), rho] / (rho + 1)
    active = (values > thresholds[:, None]).astype(np.float64)
    active[boxed_rows[:, 0] > 0] = 1.0
    inverse_count = 1.0 / np.maximum(active.sum(axis=1, keepdims=True), 1.0)

    boxed = ops.clamp(v, 0.0, 1.0)
    tau = ops.mul(ops.sub(ops.row_sums(ops.mul(v, active)), 1.0), inverse_count)
    simplex = ops.clamp_min(ops.sub(v, ops.expand_columns(tau, width)), 0.0)
    keep_box = np.repeat(boxed_rows, width, axis=1)
    return ops.add(ops.mul(boxed, keep_box), ops.mul(simplex, 1.0 - keep_box))


# === Solvers ===

def portfolio_value(z: np.ndarray, y: np.ndarray, q: np.ndarray, lam: float) -> float:
    """z.y - lam z'Qz"""
    return float(z @ y - lam * z @ q @ z)


def _check_psd(q: np.ndarray) -> np.ndarray:
    eigenvalues = np.linalg.eigvalsh(0.5 * (q + q.T))
    if eigenvalues[0] < -1e-10:
        raise OracleError(f"risk matrix is not PSD (min eigenvalue {eigenvalues[0]:.3e})")
    return eigenvalues


def kkt_residual(z: np.ndarray, gradient: np.ndarray) -> float:
    """Distance moved by a unit projected-gradient step."""
    return float(np.max(np.abs(z - project_capped_simplex(z + gradient))))


def portfolio_oracle(y_hat: np.ndarray, q: np.ndarray, lam: float,
                     tolerance: float = KKT_TOLERANCE, max_iterations: int = MAX_ITERATIONS) -> np.ndarray:
    """Accelerated projected gradient with adaptive restart for max z.y - lam z'Qz on the capped simplex."""
    if lam < 0:
        raise OracleError(f"risk aversion must be non-negative, got {lam}")
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    lipschitz = max(2.0 * lam * float(_check_psd(q)[-1]), 1e-3)
    step = 1.0 / lipschitz

    def gradient(x):
        return y_hat - 2.0 * lam * (q @ x)

    z = project_capped_simplex(y_hat * step)
    w, momentum = z.copy(), 1.0
    for _ in range(max_iterations):
        residual = kkt_residual(z, gradient(z))
        if residual <= tolerance:
            return z
        z_next = project_capped_simplex(w + step * gradient(w))
        current = portfolio_value(z, y_hat, q, lam)
        if portfolio_value(z_next, y_hat, q, lam) < current - 1e-15 * (1.0 + abs(current)):
            # restart: plain projected-gradient step from the last iterate
            momentum = 1.0
            z_next = project_capped_simplex(z + step * gradient(z))
        momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
        w = z_next + ((momentum - 1.0) / momentum_next) * (z_next - z)
        z, momentum = z_next, momentum_next

    residual = kkt_residual(z, gradient(z))
    if residual <= tolerance:
        return z
    if residual > KKT_ERROR:
        raise OracleError(f"projected gradient hit {max_iterations} iterations with KKT residual {residual:.3e}")
    logger.warning(f"Portfolio solve stopped at the iteration cap with KKT residual {residual:.3e}")
    return z


def default_unroll_step(q: np.ndarray, lam: float) -> float:
    """1 / (2 lam lambda_max(Q) + 1)"""
    return 1.0 / (2.0 * lam * float(np.linalg.eigvalsh(q)[-1]) + 1.0)


def portfolio_surrogate(y_hat, q: np.ndarray, lam: float, steps: int = UNROLL_STEPS,
                        step_size: float = None) -> Tensor:
    """Fixed-length accelerated projected gradient recorded on the tape, for a (B, n) batch."""
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    step_size = default_unroll_step(q, lam) if step_size is None else step_size
    y_hat = as_tensor(y_hat)
    single = y_hat.ndim == 1
    if single:
        y_hat = ops.reshape(y_hat, (1, y_hat.shape[0]))
    batch, width = y_hat.shape
    risk = 2.0 * lam * q

    z = Tensor(np.zeros((batch, width)))
    w, momentum = z, 1.0
    for step in range(steps):
        gradient = ops.sub(y_hat, ops.matmul(w, risk))
        z_next = project_capped_simplex_tape(ops.add(w, ops.mul(gradient, step_size)))
        momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2))
        w = ops.add(z_next, ops.mul(ops.sub(z_next, z), (momentum - 1.0) / momentum_next))
        z, momentum = z_next, momentum_next
        if not np.all(np.isfinite(z.data)):
            raise NumericalError("portfolio unroll produced a non-finite iterate", step=step)

    if single:
        z = ops.reshape(z, (width,))
    return z


class PortfolioProblem(DecisionProblem):
    """Allocate at most all capital across stocks, trading predicted return against correlation risk."""

    name = "portfolio"
    is_maximization = True

    def __init__(self, q: np.ndarray, lam: float, steps: int = UNROLL_STEPS):
        """Initialize the problem; Q must be PSD."""
        q = np.asarray(q, dtype=np.float64)
        _check_psd(q)
        super().__init__(dim_y=q.shape[0])
        self.q = q
        self.lam = lam
        self.steps = steps
        self.step_size = default_unroll_step(q, lam)

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "PortfolioProblem":
        return cls(q=dataset.extras["Q"], lam=dataset.config.lam)

    def _solve(self, y_hat: np.ndarray) -> np.ndarray:
        return portfolio_oracle(y_hat, self.q, self.lam)

    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        return portfolio_value(np.asarray(z).reshape(-1), np.asarray(y).reshape(-1), self.q, self.lam)

    def _surrogate(self, y_hat: Tensor) -> Tensor:
        return portfolio_surrogate(y_hat, self.q, self.lam, self.steps, self.step_size)

    def surrogate_objective(self, z: Tensor, y: np.ndarray) -> Tensor:
        y = np.asarray(y, dtype=np.float64).reshape(z.shape)
        gain = ops.batch_dot(z, y)
        risk = ops.batch_dot(ops.matmul(z, self.q), z)
        return ops.sub(gain, ops.mul(risk, self.lam))

    def random_predictions(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(count, self.dim_y))
