"""
Neighborhood Sampler
Perturb true labels and score every perturbation with the exact oracle, in parallel.
"""

import logging
import time
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lodl_bench.domains.base import DecisionProblem, InstanceRecord
from lodl_bench.errors import ConfigError, LodlError, SamplingError

logger = logging.getLogger(__name__)

STRATEGIES = ("all-perturbed", "one-perturbed", "two-perturbed")
DEFAULT_ALPHA = {"linear": 1.0, "webadv": 0.05, "portfolio": 0.05}
DEFAULT_SAMPLES = 5000
CHUNK_SIZE = 250


@dataclass
class SamplingConfig:
    """How to draw the neighborhood of a true label."""
    strategy: str = "all-perturbed"
    samples: int = DEFAULT_SAMPLES   # K
    alpha: float = 1.0
    seed: int = 0

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown sampling strategy '{self.strategy}'; valid: {', '.join(STRATEGIES)}",
                              key="sampling.strategy")
        if self.samples < 1:
            raise ConfigError(f"sample count must be at least 1, got {self.samples}", key="sampling.samples")
        if not self.alpha > 0:
            raise ConfigError(f"noise scale must be positive, got {self.alpha}", key="sampling.alpha")

    @classmethod
    def for_domain(cls, domain: str, **overrides) -> "SamplingConfig":
        cfg = cls(alpha=DEFAULT_ALPHA.get(domain, 1.0))
        for key, value in overrides.items():
            setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SampleTable:
    """Perturbed labels around one instance and their decision values."""
    instance_id: int
    y_true: np.ndarray        # (dim_y,)
    samples: np.ndarray       # (K, dim_y)
    losses: np.ndarray        # (K,) decision value at each sample, objective units
    dl_at_truth: float
    maximize: bool = True
    oracle_calls: int = 0
    decision_change_rate: float = 0.0
    config: Optional[SamplingConfig] = None

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dim_y(self) -> int:
        return self.samples.shape[1]

    @property
    def targets(self) -> np.ndarray:
        """Shortfall from the value at the truth, always >= 0 for an exact oracle."""
        if self.maximize:
            return self.dl_at_truth - self.losses
        return self.losses - self.dl_at_truth

    def equals(self, other: "SampleTable") -> bool:
        return (self.instance_id == other.instance_id
                and self.maximize == other.maximize
                and self.dl_at_truth == other.dl_at_truth
                and np.array_equal(self.y_true, other.y_true)
                and np.array_equal(self.samples, other.samples)
                and np.array_equal(self.losses, other.losses))


def sample_rng(seed: int, instance_id: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, instance, sample)."""
    return np.random.default_rng([seed, instance_id, index])


def sample_labels(y: np.ndarray, cfg: SamplingConfig, instance_id: int = 0) -> np.ndarray:
    """K perturbed copies of ``y`` according to the configured strategy."""
    cfg.validate()
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    dim = y.size
    if cfg.strategy == "two-perturbed" and dim < 2:
        raise ConfigError("two-perturbed sampling needs at least two label coordinates", key="sampling.strategy")
    out = np.empty((cfg.samples, dim))
    for k in range(cfg.samples):
        rng = sample_rng(cfg.seed, instance_id, k)
        row = y.copy()
        if cfg.strategy == "all-perturbed":
            row += cfg.alpha * rng.standard_normal(dim)
        else:
            count = 1 if cfg.strategy == "one-perturbed" else 2
            coords = rng.choice(dim, size=count, replace=False)
            row[coords] += cfg.alpha * rng.standard_normal(count)
        out[k] = row
    return out


def _evaluate_chunk(problem: DecisionProblem, samples: np.ndarray, y: np.ndarray,
                    z_truth: np.ndarray, start: int) -> Tuple[int, np.ndarray, int, int]:
    """Decision values for a contiguous block of samples; returns (start, values, calls, changed)."""
    values = np.empty(samples.shape[0])
    changed = 0
    for offset, y_hat in enumerate(samples):
        try:
            with problem.counter.scope("sampling"):
                z = problem.solve_exact(y_hat)
            values[offset] = problem.objective(z, y)
        except LodlError as e:
            raise SamplingError(str(e), sample_index=start + offset)
        except (ValueError, FloatingPointError) as e:
            raise SamplingError(str(e), sample_index=start + offset)
        if not np.array_equal(z, z_truth):
            changed += 1
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.isfinite(values))[0][0])
        raise SamplingError("non-finite decision value", sample_index=start + bad)
    return start, values, samples.shape[0], changed


def make_executor(workers: int, pool: str = "process") -> Optional[Executor]:
    """A worker pool for oracle fan-out, or None to evaluate inline."""
    if workers <= 1:
        return None
    if pool == "thread":
        return ThreadPoolExecutor(max_workers=workers)
    return ProcessPoolExecutor(max_workers=workers)


def build_sample_table(instance: InstanceRecord, problem: DecisionProblem, cfg: SamplingConfig,
                       workers: int = 1, executor: Optional[Executor] = None,
                       pool: str = "process") -> SampleTable:
    """Sample the neighborhood of one instance and score it with K + 1 oracle calls."""
    started = time.perf_counter()
    y = np.asarray(instance.y_true, dtype=np.float64)
    samples = sample_labels(y, cfg, instance.instance_id)

    with problem.counter.scope("sampling"):
        z_truth = problem.solve_exact(y)
    dl_at_truth = problem.objective(z_truth, y)

    own_executor = executor is None and workers > 1
    if own_executor:
        executor = make_executor(workers, pool)

    losses = np.empty(cfg.samples)
    changed = 0
    try:
        if executor is None:
            _, losses, _, changed = _evaluate_chunk(problem, samples, y, z_truth, 0)
        else:
            futures = {
                executor.submit(_evaluate_chunk, problem, samples[start:start + CHUNK_SIZE], y, z_truth, start): start
                for start in range(0, cfg.samples, CHUNK_SIZE)
            }
            for future in as_completed(futures):
                start, values, calls, chunk_changed = future.result()
                losses[start:start + values.size] = values
                changed += chunk_changed
                if isinstance(executor, ProcessPoolExecutor):
                    problem.counter.add(calls, tag="sampling")
    finally:
        if own_executor:
            executor.shutdown(wait=True)

    table = SampleTable(
        instance_id=instance.instance_id,
        y_true=y.copy(),
        samples=samples,
        losses=losses,
        dl_at_truth=float(dl_at_truth),
        maximize=problem.is_maximization,
        oracle_calls=cfg.samples + 1,
        decision_change_rate=changed / cfg.samples,
        config=cfg,
    )
    logger.debug(f"Built sample table for instance {instance.instance_id}: K={cfg.samples}, "
                 f"change rate {table.decision_change_rate:.2f}, {time.perf_counter() - started:.2f}s")
    return table


def build_sample_tables(instances: Sequence[InstanceRecord], problem: DecisionProblem, cfg: SamplingConfig,
                        workers: int = 1, pool: str = "process") -> List[SampleTable]:
    """Tables for many instances, sharing one worker pool; order follows ``instances``."""
    executor = make_executor(workers, pool)
    try:
        tables = [build_sample_table(instance, problem, cfg, executor=executor) for instance in instances]
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    if tables:
        rate = float(np.mean([t.decision_change_rate for t in tables]))
        logger.info(f"Built {len(tables)} sample tables ({cfg.strategy}, K={cfg.samples}, alpha={cfg.alpha}); "
                    f"mean decision change rate {rate:.2f}")
    return tables
