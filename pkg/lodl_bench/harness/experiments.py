"""
Experiments
Method x seed x initialization grids, the sampling ablation, and their summaries.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lodl_bench.errors import ConfigError, LodlError, StageError
from lodl_bench.harness.metrics import (
    RANDOM_DRAWS, dq_mae_line, mae_empirical_neighborhood, mae_gaussian_neighborhood, mean_std, normalize_dq,
    pearson,
)
from lodl_bench.harness.pipeline import (
    BASELINES, METHODS, ArtifactCache, MethodOutcome, SeedContext, Settings, validate_methods,
)
from lodl_bench.losses import FAMILIES
from lodl_bench.sampling import STRATEGIES, SamplingConfig

logger = logging.getLogger(__name__)

RUN_COLUMNS = [
    "domain", "method", "seed", "init", "strategy", "samples", "normalized_dq", "mean_dq", "std_dq",
    "random_ref", "optimal_ref", "sampling_cost", "evaluation_oracle_calls", "surrogate_solves",
    "train_steps", "best_step", "mae_gaussian", "mae_empirical", "slope", "intercept", "error",
]


@dataclass
class HarnessConfig:
    """Grid sizes and benchmark sweeps."""
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    seeds: int = 5
    inits: int = 3
    random_draws: int = RANDOM_DRAWS
    mae_samples: int = 200          # fresh samples per instance for the Gaussian neighborhood; 0 disables
    cell_workers: int = 1
    worker_counts: List[int] = field(default_factory=lambda: [1, 2, 4, 8])
    model_counts: List[int] = field(default_factory=lambda: [1, 2, 5, 10])
    ablation_samples: List[int] = field(default_factory=lambda: [50, 500, 5000])
    ablation_strategies: List[str] = field(default_factory=lambda: list(STRATEGIES))

    def validate(self):
        try:
            validate_methods(self.methods)
        except ValueError as e:
            raise ConfigError(str(e), key="harness.methods")
        for name in ("seeds", "inits", "random_draws", "cell_workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}", key=f"harness.{name}")
        unknown = [s for s in self.ablation_strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown sampling strategy '{unknown[0]}'", key="harness.ablation_strategies")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class RunRecord:
    """One evaluated cell of a grid."""
    domain: str
    method: str
    seed: int
    init: int = 0
    strategy: str = ""
    samples: int = 0
    normalized_dq: float = float("nan")
    mean_dq: float = float("nan")
    std_dq: float = float("nan")
    random_ref: float = float("nan")
    optimal_ref: float = float("nan")
    sampling_oracle_calls: int = 0
    sampling_cost: int = 0
    evaluation_oracle_calls: int = 0
    surrogate_solves: int = 0
    train_steps: int = 0
    best_step: int = 0
    mae_gaussian: float = float("nan")
    mae_empirical: float = float("nan")
    slope: float = float("nan")
    intercept: float = float("nan")
    error: str = ""
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self) -> Dict:
        """Deterministic columns only; wall times and measured oracle calls go to the timing dump."""
        values = asdict(self)
        return {name: values[name] for name in RUN_COLUMNS}

    def timing_row(self) -> Dict:
        return {"domain": self.domain, "method": self.method, "seed": self.seed, "init": self.init,
                "strategy": self.strategy, "samples": self.samples,
                "sampling_oracle_calls": self.sampling_oracle_calls, **self.timings}


def _method_order(record: RunRecord) -> Tuple:
    return (record.domain, record.seed, METHODS.index(record.method), record.strategy, record.samples, record.init)


def _record(ctx: SeedContext, outcome: MethodOutcome, refs: Dict[str, float], init: int,
            evaluation_calls: int) -> RunRecord:
    values = outcome.evaluation.values
    record = RunRecord(
        domain=ctx.settings.domain.kind, method=outcome.method, seed=ctx.seed, init=init,
        normalized_dq=normalize_dq(values, refs["random"], refs["optimal"]),
        mean_dq=float(np.mean(values)), std_dq=float(np.std(values)),
        random_ref=refs["random"], optimal_ref=refs["optimal"],
        sampling_oracle_calls=outcome.sampling_oracle_calls, sampling_cost=outcome.sampling_cost,
        evaluation_oracle_calls=evaluation_calls,
        surrogate_solves=outcome.surrogate_solves, timings=dict(outcome.timings),
    )
    if outcome.train is not None:
        record.train_steps = len(outcome.train.loss_curve)
        record.best_step = outcome.train.best_step
        line = outcome.train.model.slope_intercept()
        if line:
            record.slope, record.intercept = line["slope"], line["intercept"]
    return record


def run_cell(ctx: SeedContext, method: str, init: int, refs: Dict[str, float], harness: HarnessConfig,
             sampling: Optional[SamplingConfig] = None) -> RunRecord:
    """Train and evaluate one method; failures land in the record instead of propagating."""
    sampling = sampling or ctx.settings.sampling
    diagnostics = method in FAMILIES and harness.mae_samples > 0
    try:
        before = ctx.problem.counter.count("evaluation")
        outcome = ctx.run_method(method, init=init, trace=diagnostics, random_draws=harness.random_draws,
                                 sampling=sampling)
        record = _record(ctx, outcome, refs, init, ctx.problem.counter.count("evaluation") - before)
        if diagnostics:
            record.mae_gaussian = mae_gaussian_neighborhood(outcome.losses, ctx.heldout_tables(harness.mae_samples))
            record.mae_empirical = mae_empirical_neighborhood(outcome.losses, outcome.train.trace,
                                                              ctx.dataset.train, ctx.problem)
    except (LodlError, ValueError) as e:
        logger.error(f"{ctx.settings.domain.kind} seed {ctx.seed} {method} init {init} failed: {e}")
        record = RunRecord(domain=ctx.settings.domain.kind, method=method, seed=ctx.seed, init=init,
                           error=str(StageError(method, str(e))))
    if method in FAMILIES:
        record.strategy, record.samples = sampling.strategy, sampling.samples
    logger.info(f"Cell {record.domain}/{method}/seed {ctx.seed}/init {init}: "
                f"normalized DQ {record.normalized_dq:.3f}")
    return record


def _inits(method: str, harness: HarnessConfig) -> range:
    return range(1) if method in BASELINES else range(harness.inits)


def run_seed(settings: Settings, harness: HarnessConfig, output_dir: Path, force: bool = False) -> List[RunRecord]:
    """Every method and initialization for one seed, sharing the seed's cached artifacts."""
    cache = ArtifactCache(output_dir, force=force)
    seed = settings.domain.seed
    try:
        ctx = SeedContext(settings, cache)
        refs = ctx.references(harness.random_draws)
    except (LodlError, ValueError) as e:
        reason = str(StageError("gen-data", str(e)))
        logger.error(f"{settings.domain.kind} seed {seed}: {reason}")
        return [RunRecord(domain=settings.domain.kind, method=m, seed=seed, init=i, error=reason)
                for m in harness.methods for i in _inits(m, harness)]
    return [run_cell(ctx, method, init, refs, harness)
            for method in harness.methods for init in _inits(method, harness)]


def seed_list(settings: Settings, harness: HarnessConfig) -> List[int]:
    return [settings.domain.seed + offset for offset in range(harness.seeds)]


def run_experiment(settings: Settings, harness: HarnessConfig, output_dir: Path,
                   force: bool = False) -> List[RunRecord]:
    """Run the grid; seeds execute on up to ``cell_workers`` processes, never more than ``settings.workers``."""
    harness.validate()
    seeds = seed_list(settings, harness)
    records: List[RunRecord] = []
    pool_size = min(harness.cell_workers, settings.workers, len(seeds))
    if pool_size > 1:
        # one level of process parallelism: sampling inside each seed runs inline
        inner = replace(settings, workers=1)
        with ProcessPoolExecutor(max_workers=pool_size) as executor:
            futures = {executor.submit(run_seed, inner.for_seed(s), harness, output_dir, force): s for s in seeds}
            for future in as_completed(futures):
                records.extend(future.result())
    else:
        for seed in seeds:
            records.extend(run_seed(settings.for_seed(seed), harness, output_dir, force))
    records.sort(key=_method_order)
    failed = sum(1 for r in records if not r.ok)
    logger.info(f"Grid finished: {len(records)} cells, {failed} failed")
    return records


def ablation_suite(settings: Settings, harness: HarnessConfig, output_dir: Path,
                   families: Sequence[str] = FAMILIES, force: bool = False) -> List[RunRecord]:
    """Sampling strategy x sample count x family, one model initialization per seed."""
    harness.validate()
    quiet = HarnessConfig(**{**harness.to_dict(), "mae_samples": 0})
    cache = ArtifactCache(output_dir, force=force)
    records: List[RunRecord] = []
    for seed in seed_list(settings, harness):
        seeded = settings.for_seed(seed)
        ctx = SeedContext(seeded, cache)
        refs = ctx.references(harness.random_draws)
        for strategy in harness.ablation_strategies:
            for samples in harness.ablation_samples:
                sampling = SamplingConfig(strategy=strategy, samples=samples, alpha=seeded.sampling.alpha, seed=seed)
                for family in families:
                    records.append(run_cell(ctx, family, 0, refs, quiet, sampling=sampling))
    records.sort(key=_method_order)
    return records


# === Summaries ===

def _finite(values) -> List[float]:
    return [v for v in values if isinstance(v, float) and math.isfinite(v)]


def table1(records: Sequence[RunRecord]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """method -> domain -> mean/std of normalized DQ over seeds and initializations."""
    out: Dict[str, Dict[str, Dict[str, float]]] = {}
    for method in METHODS:
        for domain in sorted({r.domain for r in records}):
            cell = [r.normalized_dq for r in records if r.method == method and r.domain == domain and r.ok]
            if cell:
                out.setdefault(method, {})[domain] = mean_std(cell)
    return out


def table2(records: Sequence[RunRecord]) -> List[Dict]:
    """Per family: mean MAE in both neighborhoods and mean normalized DQ."""
    rows = []
    for family in FAMILIES:
        cell = [r for r in records if r.method == family and r.ok]
        if not cell:
            continue
        rows.append({
            "family": family,
            "mae_gaussian": mean_std(_finite(r.mae_gaussian for r in cell))["mean"],
            "mae_empirical": mean_std(_finite(r.mae_empirical for r in cell))["mean"],
            "dq": mean_std([r.normalized_dq for r in cell]),
        })
    return rows


def table4(records: Sequence[RunRecord]) -> List[Dict]:
    """Per (family, strategy, K): mean/std of normalized DQ."""
    rows = []
    keys = sorted({(r.method, r.strategy, r.samples) for r in records if r.method in FAMILIES},
                  key=lambda k: (FAMILIES.index(k[0]), k[1], k[2]))
    for family, strategy, samples in keys:
        cell = [r.normalized_dq for r in records
                if (r.method, r.strategy, r.samples) == (family, strategy, samples) and r.ok]
        rows.append({"family": family, "strategy": strategy, "samples": samples, "dq": mean_std(cell)})
    return rows


def neighborhood_summary(records: Sequence[RunRecord]) -> Dict:
    """Correlation of each neighborhood MAE with DQ across families, plus the extrapolated line."""
    rows = [r for r in table2(records) if math.isfinite(r["mae_empirical"])]
    dqs = [r["dq"]["mean"] for r in rows]
    empirical = [r["mae_empirical"] for r in rows]
    gaussian = [r["mae_gaussian"] for r in rows]
    return {
        "corr_empirical": pearson(empirical, dqs),
        "corr_gaussian": pearson(gaussian, dqs),
        "line": dq_mae_line(empirical, dqs),
    }


def learned_lines(records: Sequence[RunRecord]) -> List[Dict]:
    """Mean slope/intercept of each method's linear model (linear domain)."""
    rows = []
    for method in METHODS:
        cell = [r for r in records if r.method == method and r.ok and math.isfinite(r.slope)]
        if cell:
            rows.append({"method": method, "slope": float(np.mean([r.slope for r in cell])),
                         "intercept": float(np.mean([r.intercept for r in cell]))})
    return rows
