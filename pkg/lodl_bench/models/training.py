"""
Training Regimes
Full-batch gradient descent for two-stage (MSE), LODL and decision-focused training.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from lodl_bench.domains.base import DecisionProblem, InstanceRecord
from lodl_bench.errors import ConfigError, MissingArtifactError, NumericalError, TrainingError
from lodl_bench.gradcore import Tape, Tensor, ops
from lodl_bench.losses.families import LossParams, eval_loss, grad_loss
from lodl_bench.models.predictive import PredictiveModel, predict_batch, stack_labels

logger = logging.getLogger(__name__)

REGIMES = ("two-stage", "lodl", "dfl")


@dataclass
class TrainConfig:
    """Gradient-descent settings shared by the three regimes."""
    steps: int = 500
    lr: float = 0.01          # two-stage and LODL
    dfl_lr: float = 0.005
    seed: int = 0
    check_every: int = 25
    early_stopping: bool = True
    trace: bool = False       # keep train-set predictions at every check

    def validate(self):
        if self.steps < 1:
            raise ConfigError(f"training steps must be at least 1, got {self.steps}", key="train.steps")
        if self.lr < 0 or self.dfl_lr < 0:
            raise ConfigError("learning rates must be non-negative", key="train.lr")
        if self.check_every < 1:
            raise ConfigError(f"check_every must be at least 1, got {self.check_every}", key="train.check_every")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EvalResult:
    instance_ids: List[int]
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass
class TrainResult:
    """A trained model plus everything recorded along the way."""
    model: PredictiveModel
    regime: str
    loss_curve: List[float] = field(default_factory=list)
    val_curve: List[Tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    trace: Dict[int, np.ndarray] = field(default_factory=dict)     # step -> (N, dim_y) predictions
    surrogate_seconds: List[float] = field(default_factory=list)
    seconds: float = 0.0


def evaluate_dq(model: PredictiveModel, instances: Sequence[InstanceRecord],
                problem: DecisionProblem) -> EvalResult:
    """DQ_n = objective(solve_exact(M(x_n)), y_n) with the exact oracle."""
    predictions = predict_batch(model, instances)
    values = np.empty(len(instances))
    with problem.counter.scope("evaluation"):
        for n, (instance, y_hat) in enumerate(zip(instances, predictions)):
            values[n] = problem.decision_quality(y_hat, instance.y_true)
    return EvalResult(instance_ids=[i.instance_id for i in instances], values=values)


def _descend(model: PredictiveModel, train: Sequence[InstanceRecord], cfg: TrainConfig, lr: float, regime: str,
             objective: Callable[[Tensor, int], Tuple[Tensor, float]],
             problem: Optional[DecisionProblem] = None,
             val: Optional[Sequence[InstanceRecord]] = None) -> TrainResult:
    """The shared loop: forward on a fresh tape, backward, fixed-rate step, periodic validation."""
    cfg.validate()
    started = time.perf_counter()
    features = np.stack([np.asarray(i.features, dtype=np.float64) for i in train])
    result = TrainResult(model=model, regime=regime)
    best_model, best_value = None, -np.inf
    validate = cfg.early_stopping and problem is not None and bool(val)

    for step in range(1, cfg.steps + 1):
        with Tape() as tape:
            params = model.watch(tape)
            y_hat = model.forward_batch(features, params)
            root, value = objective(y_hat, step)
            grads = tape.backward(root)
        if not np.isfinite(value):
            raise NumericalError(f"{regime} training loss is not finite", step=step)
        result.loss_curve.append(value)
        model = model.updated({name: grads[leaf].data for name, leaf in params.items()}, lr)

        if step % cfg.check_every == 0 or step == cfg.steps:
            if cfg.trace:
                result.trace[step] = predict_batch(model, train)
            if validate:
                dq = evaluate_dq(model, val, problem).mean
                result.val_curve.append((step, dq))
                logger.debug(f"{regime} step {step}: loss {value:.4g}, validation DQ {dq:.4g}")
                if dq > best_value:
                    best_model, best_value, result.best_step = model, dq, step

    if best_model is None:
        best_model, result.best_step = model, cfg.steps
    result.model = best_model
    result.seconds = time.perf_counter() - started
    logger.info(f"Trained {regime} model for {cfg.steps} steps in {result.seconds:.1f}s "
                f"(final loss {result.loss_curve[-1]:.4g}, best step {result.best_step})")
    return result


def train_two_stage(model: PredictiveModel, train: Sequence[InstanceRecord], cfg: TrainConfig,
                    problem: Optional[DecisionProblem] = None,
                    val: Optional[Sequence[InstanceRecord]] = None) -> TrainResult:
    """Minimize (1/N) sum_n ||y_hat_n - y_n||^2."""
    labels = stack_labels(train)
    scale = 1.0 / len(train)

    def objective(y_hat, step):
        root = ops.mul(ops.sum(ops.square(ops.sub(y_hat, labels))), scale)
        return root, root.item()

    return _descend(model, train, cfg, cfg.lr, "two-stage", objective, problem, val)


def train_with_lodl(model: PredictiveModel, train: Sequence[InstanceRecord], losses: Dict[int, LossParams],
                    cfg: TrainConfig, problem: Optional[DecisionProblem] = None,
                    val: Optional[Sequence[InstanceRecord]] = None) -> TrainResult:
    """Minimize (1/N) sum_n LODL_n(y_hat_n); per-instance loss gradients enter the tape as constants."""
    missing = [i.instance_id for i in train if i.instance_id not in losses]
    if missing:
        raise MissingArtifactError(f"missing fitted loss for instance {missing[0]} "
                                   f"({len(missing)} of {len(train)} training instances)")
    fitted = [losses[i.instance_id] for i in train]
    labels = stack_labels(train)
    scale = 1.0 / len(train)

    def objective(y_hat, step):
        values = y_hat.data
        direction = np.stack([grad_loss(p, values[n], labels[n]) for n, p in enumerate(fitted)])
        value = scale * sum(eval_loss(p, values[n], labels[n]) for n, p in enumerate(fitted))
        return ops.mul(ops.sum(ops.mul(y_hat, direction)), scale), value

    before = _oracle_calls(problem)
    result = _descend(model, train, cfg, cfg.lr, "lodl", objective, problem, val)
    if _oracle_calls(problem) != before:
        raise TrainingError(f"LODL training made {_oracle_calls(problem) - before} oracle calls outside evaluation")
    return result


def _oracle_calls(problem: Optional[DecisionProblem]) -> int:
    if problem is None:
        return 0
    return problem.counter.count() - problem.counter.count("evaluation")


def train_dfl(model: PredictiveModel, train: Sequence[InstanceRecord], problem: DecisionProblem,
              cfg: TrainConfig, val: Optional[Sequence[InstanceRecord]] = None) -> TrainResult:
    """Differentiate the true objective through the domain's unrolled surrogate."""
    labels = stack_labels(train)
    timings: List[float] = []
    sign = -1.0 if problem.is_maximization else 1.0

    def objective(y_hat, step):
        started = time.perf_counter()
        decisions = problem.solve_surrogate(y_hat)
        timings.append(time.perf_counter() - started)
        if not np.all(np.isfinite(decisions.data)):
            raise NumericalError("surrogate decision is not finite", step=step)
        root = ops.mul(ops.mean(problem.surrogate_objective(decisions, labels)), sign)
        return root, root.item()

    result = _descend(model, train, cfg, cfg.dfl_lr, "dfl", objective, problem, val)
    result.surrogate_seconds = timings
    return result


def train_model(regime: str, model: PredictiveModel, train: Sequence[InstanceRecord], cfg: TrainConfig,
                problem: Optional[DecisionProblem] = None, losses: Optional[Dict[int, LossParams]] = None,
                val: Optional[Sequence[InstanceRecord]] = None) -> TrainResult:
    """Dispatch by regime name."""
    if regime == "two-stage":
        return train_two_stage(model, train, cfg, problem, val)
    if regime == "lodl":
        if losses is None:
            raise MissingArtifactError("missing fitted losses for LODL training")
        return train_with_lodl(model, train, losses, cfg, problem, val)
    if regime == "dfl":
        if problem is None:
            raise TrainingError("DFL training needs a decision problem")
        return train_dfl(model, train, problem, cfg, val)
    raise ValueError(f"Unknown training regime: {regime}")
