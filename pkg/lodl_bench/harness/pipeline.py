"""
Pipeline
Cached stages (data, samples, fitted losses, references) and one-seed experiment contexts.

Artifacts live under an output directory:
    data/       <domain>-seed<seed>.jsonl and reference values
    samples/    <domain>-seed<seed>-<strategy>-k<K>.sqlite
    losses/     <domain>-seed<seed>-<strategy>-k<K>-<family>.sqlite
    models/     JSON checkpoints
    reports/    runs.csv, timings.json, summary.md, benchmark dumps
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lodl_bench.domains import (
    DecisionProblem, Dataset, DomainConfig, build_problem, config_fingerprint, generate_dataset, read_dataset,
    write_dataset,
)
from lodl_bench.errors import MissingArtifactError, StoreError
from lodl_bench.harness.metrics import optimal_reference, random_dq_per_instance, random_reference
from lodl_bench.losses import FAMILIES, FitConfig, LossParams, LossStore, fit_losses
from lodl_bench.models import (
    EvalResult, PredictiveModel, TrainConfig, TrainResult, evaluate_dq, model_for_domain, train_model,
)
from lodl_bench.sampling import SampleStore, SampleTable, SamplingConfig, build_sample_tables

logger = logging.getLogger(__name__)

OUTPUT_DIRS = ("data", "samples", "losses", "models", "reports")
BASELINES = ("random", "optimal")
TRAINED = ("two-stage", "dfl")
METHODS = BASELINES + TRAINED + FAMILIES
HELDOUT_STREAM = 7919


def validate_methods(methods: Sequence[str]):
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"Unknown method: {unknown[0]}; valid: {', '.join(METHODS)}")


@dataclass
class StageInfo:
    """How a cached stage was satisfied."""
    hit: bool
    seconds: float = 0.0
    oracle_calls: int = 0


class ArtifactCache:
    """Fingerprinted artifacts under one output directory.

    An existing artifact with the same fingerprint is reused; a different fingerprint
    is an error unless ``force`` is set, in which case the artifact is rebuilt.
    """

    def __init__(self, output_dir: Path, force: bool = False):
        """Create the output layout."""
        self.root = Path(output_dir)
        self.force = force
        for name in OUTPUT_DIRS:
            (self.root / name).mkdir(parents=True, exist_ok=True)

    # Paths

    def dataset_path(self, cfg: DomainConfig) -> Path:
        return self.root / "data" / f"{cfg.kind}-seed{cfg.seed}.jsonl"

    def samples_path(self, cfg: DomainConfig, sampling: SamplingConfig, tag: str = "") -> Path:
        return self.root / "samples" / f"{cfg.kind}-seed{cfg.seed}-{sampling.strategy}-k{sampling.samples}{tag}.sqlite"

    def losses_path(self, cfg: DomainConfig, sampling: SamplingConfig, family: str) -> Path:
        stem = f"{cfg.kind}-seed{cfg.seed}-{sampling.strategy}-k{sampling.samples}-{family}"
        return self.root / "losses" / f"{stem}.sqlite"

    def model_path(self, cfg: DomainConfig, method: str, init: int) -> Path:
        return self.root / "models" / f"{cfg.kind}-seed{cfg.seed}-{method}-init{init}.json"

    def report_path(self, name: str) -> Path:
        return self.root / "reports" / name

    # Fingerprints

    @staticmethod
    def dataset_fingerprint(cfg: DomainConfig) -> str:
        return config_fingerprint({"domain": cfg.to_dict()})

    def samples_fingerprint(self, cfg: DomainConfig, sampling: SamplingConfig) -> str:
        return config_fingerprint({"data": self.dataset_fingerprint(cfg), "sampling": sampling.to_dict()})

    def losses_fingerprint(self, cfg: DomainConfig, sampling: SamplingConfig, family: str,
                           fit: FitConfig, method: str) -> str:
        return config_fingerprint({"samples": self.samples_fingerprint(cfg, sampling), "family": family,
                                   "fit": fit.to_dict(), "method": method})

    def _conflict(self, path: Path, found: Optional[str], wanted: str) -> bool:
        """True when the artifact must be rebuilt; raises when it may not be."""
        if found == wanted:
            return False
        if self.force:
            logger.warning(f"Replacing {path} (configuration changed)")
            return True
        raise StoreError(f"{path} was produced by a different configuration "
                         f"(fingerprint {str(found)[:12]} != {wanted[:12]}); rerun with --force to replace it")

    # Stages

    def dataset(self, cfg: DomainConfig) -> Tuple[Dataset, StageInfo]:
        path = self.dataset_path(cfg)
        wanted = self.dataset_fingerprint(cfg)
        if path.exists():
            dataset = read_dataset(path)
            if not self._conflict(path, self.dataset_fingerprint(dataset.config), wanted):
                logger.debug(f"Cache hit: dataset {path}")
                return dataset, StageInfo(hit=True)
        started = time.perf_counter()
        dataset = generate_dataset(cfg)
        write_dataset(path, dataset)
        return dataset, StageInfo(hit=False, seconds=time.perf_counter() - started)

    def load_dataset(self, cfg: DomainConfig) -> Dataset:
        path = self.dataset_path(cfg)
        if not path.exists():
            raise MissingArtifactError(f"missing dataset for {cfg.kind} seed {cfg.seed}: run gen-data first ({path})")
        return read_dataset(path)

    def _store_fingerprint(self, store) -> Optional[str]:
        return store.get_meta("fingerprint")

    def samples(self, dataset: Dataset, problem: DecisionProblem, sampling: SamplingConfig, workers: int = 1,
                split: str = "train", tag: str = "") -> Tuple[List[SampleTable], StageInfo]:
        """Sample tables for every instance of ``split``; built once per fingerprint."""
        path = self.samples_path(dataset.config, sampling, tag)
        wanted = config_fingerprint({"tables": self.samples_fingerprint(dataset.config, sampling), "split": split})
        if path.exists():
            store = SampleStore(path)
            if not self._conflict(path, self._store_fingerprint(store), wanted):
                logger.debug(f"Cache hit: sample tables {path}")
                return store.get_all(), StageInfo(hit=True, oracle_calls=0)

        started = time.perf_counter()
        before = problem.counter.count("sampling")
        tables = build_sample_tables(dataset.split(split), problem, sampling, workers=workers)
        info = StageInfo(hit=False, seconds=time.perf_counter() - started,
                         oracle_calls=problem.counter.count("sampling") - before)
        self._write_samples(path, tables, sampling,
                            {"fingerprint": wanted, "seed": dataset.config.seed, "split": split,
                             "domain_config": dataset.config.to_dict()})
        return tables, info

    def load_samples(self, cfg: DomainConfig, sampling: SamplingConfig) -> List[SampleTable]:
        path = self.samples_path(cfg, sampling)
        if not path.exists():
            raise MissingArtifactError(
                f"missing sample table for {cfg.kind} seed {cfg.seed} ({sampling.strategy}, K={sampling.samples}): "
                f"run sample first ({path})")
        return SampleStore(path).get_all()

    @staticmethod
    def _write_samples(path: Path, tables: List[SampleTable], sampling: SamplingConfig, meta: Dict):
        temp_path = path.with_name(path.name + ".tmp")
        if temp_path.exists():
            temp_path.unlink()
        SampleStore(temp_path, create=True, use_wal=False).put_many(tables, sampling, meta)
        os.replace(temp_path, path)

    def losses(self, tables: List[SampleTable], cfg: DomainConfig, sampling: SamplingConfig, family: str,
               fit: FitConfig, method: str = "gd", workers: int = 1) -> Tuple[Dict[int, LossParams], StageInfo]:
        path = self.losses_path(cfg, sampling, family)
        wanted = self.losses_fingerprint(cfg, sampling, family, fit, method)
        if path.exists():
            store = LossStore(path)
            if not self._conflict(path, self._store_fingerprint(store), wanted):
                logger.debug(f"Cache hit: fitted {family} losses {path}")
                return store.get_family(family), StageInfo(hit=True)

        started = time.perf_counter()
        fitted = fit_losses(tables, family, fit, workers=workers, method=method)
        info = StageInfo(hit=False, seconds=time.perf_counter() - started)
        temp_path = path.with_name(path.name + ".tmp")
        if temp_path.exists():
            temp_path.unlink()
        LossStore(temp_path, create=True, use_wal=False).put_many(
            fitted, {t.instance_id: t.y_true for t in tables},
            {"fingerprint": wanted, "family": family, "fit_config": fit.to_dict(), "method": method,
             "sampling_config": sampling.to_dict(), "seed": cfg.seed})
        os.replace(temp_path, path)
        return fitted, info

    def load_losses(self, cfg: DomainConfig, sampling: SamplingConfig, family: str) -> Dict[int, LossParams]:
        path = self.losses_path(cfg, sampling, family)
        if not path.exists():
            raise MissingArtifactError(f"missing fitted {family} losses for {cfg.kind} seed {cfg.seed}: "
                                       f"run fit first ({path})")
        return LossStore(path).get_family(family)

    def references(self, dataset: Dataset, problem: DecisionProblem, draws: int) -> Dict[str, float]:
        """Random and optimal reference DQs on the test split, cached next to the dataset."""
        path = self.root / "data" / f"{dataset.config.kind}-seed{dataset.config.seed}-references.json"
        key = config_fingerprint({"data": self.dataset_fingerprint(dataset.config), "draws": draws})
        if path.exists():
            cached = json.loads(path.read_text())
            if cached.get("fingerprint") == key:
                return cached["values"]
        values = {
            "random": random_reference(dataset.test, problem, seed=dataset.config.seed, draws=draws),
            "optimal": optimal_reference(dataset.test, problem),
        }
        temp_path = path.with_name(path.name + ".tmp")
        temp_path.write_text(json.dumps({"fingerprint": key, "values": values}))
        os.replace(temp_path, path)
        return values


@dataclass
class Settings:
    """Everything a single pipeline run needs, resolved from configuration."""
    domain: DomainConfig
    sampling: SamplingConfig
    fit: FitConfig
    train: TrainConfig
    model_kind: Optional[str] = None
    fit_method: str = "gd"
    workers: int = 1

    def for_seed(self, seed: int) -> "Settings":
        """A copy whose data, sampling and fitting randomness all derive from ``seed``."""
        domain = DomainConfig(**{**self.domain.to_dict(), "seed": seed})
        sampling = SamplingConfig(**{**self.sampling.to_dict(), "seed": seed})
        fit = FitConfig(**{**self.fit.to_dict(), "seed": seed})
        train = TrainConfig(**{**self.train.to_dict(), "seed": seed})
        return Settings(domain=domain, sampling=sampling, fit=fit, train=train, model_kind=self.model_kind,
                        fit_method=self.fit_method, workers=self.workers)

    def to_dict(self) -> Dict:
        return {"domain": self.domain.to_dict(), "sampling": self.sampling.to_dict(), "fit": self.fit.to_dict(),
                "train": self.train.to_dict(), "model_kind": self.model_kind, "fit_method": self.fit_method}


@dataclass
class MethodOutcome:
    """Trained (or baseline) predictions evaluated on the test split."""
    method: str
    evaluation: EvalResult
    train: Optional[TrainResult] = None
    timings: Dict[str, float] = field(default_factory=dict)
    sampling_oracle_calls: int = 0
    sampling_cost: int = 0
    surrogate_solves: int = 0
    losses: Optional[Dict[int, LossParams]] = None


class SeedContext:
    """Dataset, problem and cached artifacts of one seed, shared by every method run on it."""

    def __init__(self, settings: Settings, cache: ArtifactCache):
        """Load or generate the dataset for the settings' seed."""
        self.settings = settings
        self.cache = cache
        self.seed = settings.domain.seed
        self.dataset, self.data_info = cache.dataset(settings.domain)
        self.problem = build_problem(self.dataset)

    def references(self, draws: int) -> Dict[str, float]:
        return self.cache.references(self.dataset, self.problem, draws)

    def tables(self, sampling: Optional[SamplingConfig] = None) -> Tuple[List[SampleTable], StageInfo]:
        return self.cache.samples(self.dataset, self.problem, sampling or self.settings.sampling,
                                  workers=self.settings.workers)

    def heldout_tables(self, samples: int) -> List[SampleTable]:
        """Fresh neighborhood tables drawn with a seed the fits never saw."""
        base = self.settings.sampling
        heldout = SamplingConfig(strategy=base.strategy, samples=samples, alpha=base.alpha,
                                 seed=self.seed * HELDOUT_STREAM + 1)
        tables, _ = self.cache.samples(self.dataset, self.problem, heldout, workers=self.settings.workers,
                                       tag="-heldout")
        return tables

    def losses(self, family: str,
               sampling: Optional[SamplingConfig] = None) -> Tuple[Dict[int, LossParams], StageInfo, StageInfo]:
        sampling = sampling or self.settings.sampling
        tables, sample_info = self.tables(sampling)
        fitted, fit_info = self.cache.losses(tables, self.settings.domain, sampling, family, self.settings.fit,
                                             method=self.settings.fit_method, workers=self.settings.workers)
        return fitted, sample_info, fit_info

    def new_model(self, init: int) -> PredictiveModel:
        return model_for_domain(self.settings.domain, seed=self.seed * 1000 + init, kind=self.settings.model_kind,
                                sample=self.dataset.train[0])

    def run_method(self, method: str, init: int = 0, trace: bool = False, random_draws: int = 100,
                   sampling: Optional[SamplingConfig] = None) -> MethodOutcome:
        """Train (if needed) and evaluate one method on the test split."""
        validate_methods([method])
        test = self.dataset.test
        if method == "optimal":
            return MethodOutcome(method, self._evaluate_truth(test))
        if method == "random":
            return MethodOutcome(method, self._evaluate_random(test, random_draws))

        timings: Dict[str, float] = {}
        losses, sampling_calls, sampling_cost = None, 0, 0
        if method in FAMILIES:
            sampling = sampling or self.settings.sampling
            losses, sample_info, fit_info = self.losses(method, sampling)
            timings.update(sampling=sample_info.seconds, fitting=fit_info.seconds,
                           sampling_cache_hit=float(sample_info.hit))
            sampling_calls = sample_info.oracle_calls
            sampling_cost = len(self.dataset.train) * (sampling.samples + 1)
        train_cfg = TrainConfig(**{**self.settings.train.to_dict(), "trace": trace})
        regime = method if method in TRAINED else "lodl"
        before = self.problem.counter.count("surrogate")
        result = train_model(regime, self.new_model(init), self.dataset.train, train_cfg,
                             problem=self.problem, losses=losses, val=self.dataset.val)
        timings["training"] = result.seconds
        surrogate = self.problem.counter.count("surrogate") - before

        started = time.perf_counter()
        evaluation = evaluate_dq(result.model, test, self.problem)
        timings["evaluation"] = time.perf_counter() - started
        return MethodOutcome(method, evaluation, train=result, timings=timings,
                             sampling_oracle_calls=sampling_calls, sampling_cost=sampling_cost,
                             surrogate_solves=surrogate, losses=losses)

    def _evaluate_truth(self, instances) -> EvalResult:
        with self.problem.counter.scope("evaluation"):
            values = np.array([self.problem.decision_quality(i.y_true, i.y_true) for i in instances])
        return EvalResult(instance_ids=[i.instance_id for i in instances], values=values)

    def _evaluate_random(self, instances, draws: int) -> EvalResult:
        values = random_dq_per_instance(instances, self.problem, seed=self.seed, draws=draws)
        return EvalResult(instance_ids=[i.instance_id for i in instances], values=values)
