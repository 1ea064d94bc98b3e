"""
PSD Certificates
Check that fitted quadratic losses keep their curvature matrices positive definite.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from lodl_bench.losses.families import DirectedQuadratic, LossParams, Quadratic

logger = logging.getLogger(__name__)

POWER_ITERATIONS = 500
POWER_TOLERANCE = 1e-10


@dataclass
class PsdReport:
    """Smallest eigenvalue per curvature block, and whether each clears the floor."""
    family: str
    w_min: float
    blocks: Dict[str, float] = field(default_factory=dict)
    scale: float = 1.0     # largest eigenvalue seen, sets the tolerance

    @property
    def ok(self) -> bool:
        slack = 1e-8 * max(1.0, self.w_min, self.scale)
        return all(value >= self.w_min - slack for value in self.blocks.values())

    @property
    def min_eigenvalue(self) -> float:
        return min(self.blocks.values()) if self.blocks else float("nan")


def _power_iteration(matrix: np.ndarray) -> float:
    """Dominant eigenvalue of a symmetric matrix from a fixed start vector."""
    n = matrix.shape[0]
    v = np.ones(n) / np.sqrt(n) + 1e-3 * np.arange(n) / max(n, 1)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITERATIONS):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        updated = float(v @ matrix @ v)
        if abs(updated - estimate) <= POWER_TOLERANCE * max(1.0, abs(updated)):
            return updated
        estimate = updated
    return estimate


def smallest_eigenvalue(matrix: np.ndarray, dense: bool = False) -> float:
    """lambda_min by shifted power iteration, or by a dense symmetric solve."""
    matrix = 0.5 * (matrix + matrix.T)
    if dense:
        return float(np.linalg.eigvalsh(matrix)[0])
    top = _power_iteration(matrix)
    shifted = top * np.eye(matrix.shape[0]) - matrix
    return top - _power_iteration(shifted)


def _blocks(params: LossParams) -> Dict[str, np.ndarray]:
    if isinstance(params, Quadratic):
        return {"H": params.hessian()}
    if isinstance(params, DirectedQuadratic):
        dim = params.L_pp.shape[0]
        floor = params.w_min * np.eye(dim)
        g = params.stacked_factor()
        return {
            "plus": params.L_pp @ params.L_pp.T + params.L_pm @ params.L_pm.T + floor,
            "minus": params.L_mp @ params.L_mp.T + params.L_mm @ params.L_mm.T + floor,
            "stacked": g @ g.T + params.w_min * np.eye(2 * dim),
        }
    raise ValueError(f"No curvature certificate for loss family: {params.family}")


def psd_certificate(params: LossParams, dense: bool = False) -> PsdReport:
    blocks = _blocks(params)
    report = PsdReport(family=params.family, w_min=params.w_min)
    for name, matrix in blocks.items():
        report.blocks[name] = smallest_eigenvalue(matrix, dense=dense)
        report.scale = max(report.scale, float(np.max(np.abs(np.diag(matrix)))))
    if not report.ok:
        logger.warning(f"{params.family} loss failed its PSD certificate: {report.blocks}")
    return report
