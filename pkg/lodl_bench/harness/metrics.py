"""
Metrics
Decision-quality normalization, reference baselines and neighborhood error diagnostics.
"""

import logging
from typing import Dict, Mapping, Sequence

import numpy as np

from lodl_bench.domains.base import DecisionProblem, InstanceRecord
from lodl_bench.errors import MissingArtifactError
from lodl_bench.losses.families import LossParams, eval_batch, eval_loss
from lodl_bench.sampling.sampler import SampleTable

logger = logging.getLogger(__name__)

RANDOM_DRAWS = 100
RANDOM_STREAM = 104729


def normalize_dq(raw: Sequence[float], random_ref: float, optimal_ref: float) -> float:
    """(mean(raw) - random) / (optimal - random): random scores 0, the truth scores 1."""
    if not optimal_ref > random_ref:
        raise ValueError(f"degenerate normalization: optimal reference {optimal_ref} "
                         f"does not exceed random reference {random_ref}")
    return float((np.mean(raw) - random_ref) / (optimal_ref - random_ref))


def random_dq_per_instance(instances: Sequence[InstanceRecord], problem: DecisionProblem,
                           seed: int, draws: int = RANDOM_DRAWS) -> np.ndarray:
    """Mean DQ of ``draws`` uniform-random predictions, per instance."""
    rng = np.random.default_rng([seed, RANDOM_STREAM])
    values = np.empty(len(instances))
    with problem.counter.scope("evaluation"):
        for n, instance in enumerate(instances):
            predictions = problem.random_predictions(rng, draws)
            values[n] = np.mean([problem.decision_quality(p, instance.y_true) for p in predictions])
    return values


def random_reference(instances: Sequence[InstanceRecord], problem: DecisionProblem,
                     seed: int, draws: int = RANDOM_DRAWS) -> float:
    return float(np.mean(random_dq_per_instance(instances, problem, seed, draws)))


def optimal_reference(instances: Sequence[InstanceRecord], problem: DecisionProblem) -> float:
    with problem.counter.scope("evaluation"):
        return float(np.mean([problem.decision_quality(i.y_true, i.y_true) for i in instances]))


def mae_gaussian_neighborhood(losses: Mapping[int, LossParams], tables: Sequence[SampleTable]) -> float:
    """Mean |LODL(y_hat_k) - shortfall_k| over fresh samples, averaged over instances."""
    errors = []
    for table in tables:
        if table.instance_id not in losses:
            raise MissingArtifactError(f"missing fitted loss for instance {table.instance_id}")
        predicted = eval_batch(losses[table.instance_id], table.samples, table.y_true)
        errors.append(float(np.mean(np.abs(predicted - table.targets))))
    return float(np.mean(errors))


def mae_empirical_neighborhood(losses: Mapping[int, LossParams], trace: Mapping[int, np.ndarray],
                               instances: Sequence[InstanceRecord], problem: DecisionProblem) -> float:
    """Mean |LODL(y_hat) - shortfall(y_hat)| over the predictions checkpointed during training."""
    if not trace:
        raise MissingArtifactError("no prediction checkpoints recorded")
    errors = []
    with problem.counter.scope("evaluation"):
        at_truth = [problem.decision_quality(i.y_true, i.y_true) for i in instances]
        for step in sorted(trace):
            for instance, value_at_truth, y_hat in zip(instances, at_truth, trace[step]):
                shortfall = problem.shortfall(problem.decision_quality(y_hat, instance.y_true), value_at_truth)
                errors.append(abs(eval_loss(losses[instance.instance_id], y_hat, instance.y_true) - shortfall))
    return float(np.mean(errors))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Correlation coefficient, NaN when either side is constant."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def dq_mae_line(maes: Sequence[float], dqs: Sequence[float]) -> Dict[str, float]:
    """Least-squares line DQ = slope * MAE + intercept; the intercept is the DQ extrapolated to zero error."""
    maes, dqs = np.asarray(maes, dtype=np.float64), np.asarray(dqs, dtype=np.float64)
    keep = np.isfinite(maes) & np.isfinite(dqs)
    if keep.sum() < 2 or np.ptp(maes[keep]) == 0:
        return {"slope": float("nan"), "intercept": float("nan"), "dq_at_zero_mae": float("nan")}
    slope, intercept = np.polyfit(maes[keep], dqs[keep], 1)
    return {"slope": float(slope), "intercept": float(intercept), "dq_at_zero_mae": float(intercept)}


def mean_std(values: Sequence[float]) -> Dict[str, float]:
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=np.float64)
    if values.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "count": 0}
    return {"mean": float(np.mean(values)), "std": float(np.std(values)), "count": int(values.size)}
