"""
Benchmarks
Wall-time measurements for parallel sampling and for amortizing fitted losses across models,
plus the cost model that predicts both pipelines from measured unit times.
"""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from lodl_bench.domains import build_problem, generate_dataset
from lodl_bench.harness.pipeline import Settings
from lodl_bench.losses import fit_losses
from lodl_bench.models import model_for_domain, train_dfl, train_two_stage, train_with_lodl
from lodl_bench.sampling import build_sample_tables

logger = logging.getLogger(__name__)

DEFAULT_FAMILY = "directedquadratic"


@dataclass
class TimingRecord:
    """Measured unit costs (seconds) and whole-pipeline times for one worker count."""
    steps: int                 # T
    samples: int               # K
    instances: int             # N
    workers: int               # P
    t_model: float = 0.0       # one forward/backward pass per instance
    t_oracle: float = 0.0      # one exact solve
    t_surrogate: float = 0.0   # one surrogate solve per instance
    t_lodl: float = 0.0        # fitting one loss
    sampling_seconds: float = 0.0
    fitting_seconds: float = 0.0
    training_seconds: float = 0.0
    lodl_seconds: float = 0.0
    dfl_seconds: float = 0.0
    predicted_lodl: float = 0.0
    predicted_dfl: float = 0.0
    speedup: float = 1.0

    def to_dict(self) -> Dict:
        return asdict(self)


def cost_model(t_model: float, t_oracle: float, t_surrogate: float, t_lodl: float,
               instances: int, samples: int, steps: int, workers: int) -> Dict[str, float]:
    """LODL: K N T_O / P + N T_LODL + T N T_M.  DFL: T N (T'_O + T_M)."""
    return {
        "lodl": samples * instances * t_oracle / workers + instances * t_lodl + steps * instances * t_model,
        "dfl": steps * instances * (t_surrogate + t_model),
    }


def _prepare(settings: Settings):
    dataset = generate_dataset(settings.domain)
    return dataset, build_problem(dataset)


def _timed(fn, *args, **kwargs):
    started = time.perf_counter()
    value = fn(*args, **kwargs)
    return value, time.perf_counter() - started


def benchmark_parallel(settings: Settings, worker_counts: Sequence[int], family: str = DEFAULT_FAMILY,
                       include_dfl: bool = True) -> List[TimingRecord]:
    """End-to-end LODL pipeline time at each worker count, next to a DFL run of the same length."""
    dataset, problem = _prepare(settings)
    train = dataset.train
    n, k, t = len(train), settings.sampling.samples, settings.train.steps
    train_cfg = settings.train
    records: List[TimingRecord] = []
    baseline: Optional[float] = None

    two_stage = train_two_stage(model_for_domain(settings.domain, seed=settings.domain.seed), train, train_cfg)
    t_model = two_stage.seconds / (t * n)

    for workers in worker_counts:
        tables, sampling_seconds = _timed(build_sample_tables, train, problem, settings.sampling, workers=workers)
        losses, fitting_seconds = _timed(fit_losses, tables, family, settings.fit, workers=workers,
                                         method=settings.fit_method)
        trained = train_with_lodl(model_for_domain(settings.domain, seed=settings.domain.seed),
                                  train, losses, train_cfg)
        record = TimingRecord(steps=t, samples=k, instances=n, workers=workers, t_model=t_model,
                              t_oracle=sampling_seconds * workers / (n * (k + 1)),
                              t_lodl=fitting_seconds * workers / n,
                              sampling_seconds=sampling_seconds, fitting_seconds=fitting_seconds,
                              training_seconds=trained.seconds)
        record.lodl_seconds = sampling_seconds + fitting_seconds + trained.seconds
        if include_dfl:
            dfl = train_dfl(model_for_domain(settings.domain, seed=settings.domain.seed), train, problem, train_cfg)
            record.dfl_seconds = dfl.seconds
            record.t_surrogate = float(np.mean(dfl.surrogate_seconds)) / n
        predicted = cost_model(record.t_model, record.t_oracle, record.t_surrogate, record.t_lodl, n, k, t, workers)
        record.predicted_lodl, record.predicted_dfl = predicted["lodl"], predicted["dfl"]
        baseline = baseline or record.lodl_seconds
        record.speedup = baseline / record.lodl_seconds
        logger.info(f"P={workers}: LODL pipeline {record.lodl_seconds:.1f}s (speedup {record.speedup:.2f}x), "
                    f"DFL {record.dfl_seconds:.1f}s")
        records.append(record)
    return records


def benchmark_amortization(settings: Settings, model_counts: Sequence[int], family: str = DEFAULT_FAMILY,
                           dfl_models: int = 2) -> List[Dict]:
    """Per-model cost when one set of sample tables and fitted losses serves m models."""
    if not model_counts or min(model_counts) < 1:
        raise ValueError("model counts must be at least 1")
    dataset, problem = _prepare(settings)
    train = dataset.train
    largest = max(model_counts)

    tables, sampling_seconds = _timed(build_sample_tables, train, problem, settings.sampling,
                                      workers=settings.workers)
    losses, fitting_seconds = _timed(fit_losses, tables, family, settings.fit, workers=settings.workers,
                                     method=settings.fit_method)
    fixed = sampling_seconds + fitting_seconds

    def new_model(init):
        return model_for_domain(settings.domain, seed=settings.domain.seed * 1000 + init)

    lodl = [train_with_lodl(new_model(i), train, losses, settings.train).seconds for i in range(largest)]
    two_stage = [train_two_stage(new_model(i), train, settings.train).seconds for i in range(largest)]
    dfl = [train_dfl(new_model(i), train, problem, settings.train).seconds for i in range(min(dfl_models, largest))]
    dfl_per_model = float(np.mean(dfl))

    rows = []
    for m in sorted(model_counts):
        lodl_per_model = (fixed + sum(lodl[:m])) / m
        two_stage_per_model = sum(two_stage[:m]) / m
        rows.append({
            "models": m,
            "lodl_per_model": lodl_per_model,
            "two_stage_per_model": two_stage_per_model,
            "dfl_per_model": dfl_per_model,
            "lodl_over_two_stage": lodl_per_model / two_stage_per_model,
            "fixed_seconds": fixed,
        })
        logger.info(f"m={m}: LODL {lodl_per_model:.2f}s/model, two-stage {two_stage_per_model:.2f}s/model, "
                    f"DFL {dfl_per_model:.2f}s/model")
    return rows
