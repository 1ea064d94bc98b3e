"""
Decision Problems
Shared contract for predict-then-optimize domains, their configs and datasets.
"""

import logging
import threading
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from lodl_bench.errors import ConfigError
from lodl_bench.gradcore import Tensor

logger = logging.getLogger(__name__)

DOMAIN_KINDS = ("linear", "webadv", "portfolio")
SPLITS = ("train", "val", "test")


@dataclass
class DomainConfig:
    """Sizes and constants of one benchmark domain."""
    kind: str
    n_items: int = 50          # resources (linear) or stocks (portfolio)
    n_websites: int = 5        # M, webadv only
    n_users: int = 10          # N, webadv only
    budget: int = 1            # B
    lam: float = 0.1           # risk aversion, portfolio only
    n_train: int = 200
    n_val: int = 200
    n_test: int = 400
    seed: int = 0

    @classmethod
    def defaults(cls, kind: str, **overrides) -> "DomainConfig":
        """Documented defaults per domain kind."""
        if kind == "linear":
            base = dict(n_items=50, budget=1, n_train=200, n_val=200, n_test=400)
        elif kind == "webadv":
            base = dict(n_websites=5, n_users=10, budget=2, n_train=80, n_val=20, n_test=500)
        elif kind == "portfolio":
            base = dict(n_items=50, lam=0.1, n_train=200, n_val=200, n_test=400)
        else:
            raise ConfigError(f"unknown domain '{kind}'; valid domains: {', '.join(DOMAIN_KINDS)}",
                              key="domain.kind")
        base.update(overrides)
        cfg = cls(kind=kind, **base)
        cfg.validate()
        return cfg

    @property
    def selectable(self) -> int:
        return self.n_websites if self.kind == "webadv" else self.n_items

    def validate(self):
        if self.kind not in DOMAIN_KINDS:
            raise ConfigError(f"unknown domain '{self.kind}'; valid domains: {', '.join(DOMAIN_KINDS)}",
                              key="domain.kind")
        if self.kind != "portfolio" and not 1 <= self.budget < self.selectable:
            raise ConfigError(f"budget must satisfy 1 <= B < {self.selectable}, got {self.budget}",
                              key="domain.budget")
        if self.lam < 0:
            raise ConfigError(f"risk aversion must be non-negative, got {self.lam}", key="domain.lam")
        for name in ("n_items", "n_websites", "n_users", "n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}",
                                  key=f"domain.{name}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class InstanceRecord:
    """One (features, true parameters) pair."""
    instance_id: int
    split: str
    features: np.ndarray   # (items, features per item)
    y_true: np.ndarray     # (dim_y,)


@dataclass
class Dataset:
    """Train/val/test splits plus whatever the problem needs beyond the labels."""
    config: DomainConfig
    splits: Dict[str, List[InstanceRecord]]
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def split(self, name: str) -> List[InstanceRecord]:
        return self.splits[name]

    @property
    def train(self) -> List[InstanceRecord]:
        return self.splits["train"]

    @property
    def val(self) -> List[InstanceRecord]:
        return self.splits["val"]

    @property
    def test(self) -> List[InstanceRecord]:
        return self.splits["test"]


class OracleCounter:
    """Thread-safe tally of exact and surrogate solves, bucketed by tag."""

    def __init__(self):
        """Initialize empty counts."""
        self.counts: Dict[str, int] = {}
        self._lock = threading.Lock()
        self._local = threading.local()

    def __getstate__(self):
        return {"counts": dict(self.counts)}

    def __setstate__(self, state):
        self.counts = dict(state["counts"])
        self._lock = threading.Lock()
        self._local = threading.local()

    @property
    def current_tag(self) -> str:
        stack = getattr(self._local, "tags", None)
        return stack[-1] if stack else "exact"

    @contextmanager
    def scope(self, tag: str) -> Iterator[None]:
        """Attribute solves on this thread to ``tag`` while the block runs."""
        if not hasattr(self._local, "tags"):
            self._local.tags = []
        self._local.tags.append(tag)
        try:
            yield
        finally:
            self._local.tags.pop()

    def add(self, n: int = 1, tag: Optional[str] = None):
        tag = tag or self.current_tag
        with self._lock:
            self.counts[tag] = self.counts.get(tag, 0) + n

    def count(self, tag: Optional[str] = None) -> int:
        with self._lock:
            if tag is None:
                return sum(v for k, v in self.counts.items() if k != "surrogate")
            return self.counts.get(tag, 0)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return dict(self.counts)

    def reset(self):
        with self._lock:
            self.counts.clear()


class DecisionProblem(ABC):
    """Oracle solve, objective evaluation and a differentiable surrogate for one domain."""

    name: str = "problem"
    is_maximization: bool = True

    def __init__(self, dim_y: int):
        """Initialize the shared counter."""
        self.dim_y = dim_y
        self.counter = OracleCounter()

    # Contract

    @abstractmethod
    def _solve(self, y_hat: np.ndarray) -> np.ndarray:
        """Exact decision vector for predicted parameters."""

    @abstractmethod
    def objective(self, z: np.ndarray, y: np.ndarray) -> float:
        """Objective value of decision ``z`` under true parameters ``y``."""

    @abstractmethod
    def _surrogate(self, y_hat: Tensor) -> Tensor:
        """Batched differentiable decision for a (B, dim_y) tensor of predictions."""

    @abstractmethod
    def surrogate_objective(self, z: Tensor, y: np.ndarray) -> Tensor:
        """Batched objective (B,) of decisions ``z`` under true parameters ``y`` (B, dim_y)."""

    @abstractmethod
    def random_predictions(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """``count`` uniform random prediction vectors for the Random baseline."""

    # Shared behaviour

    def solve_exact(self, y_hat: np.ndarray) -> np.ndarray:
        y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
        if y_hat.size != self.dim_y:
            raise ValueError(f"{self.name}: expected {self.dim_y} predictions, got {y_hat.size}")
        self.counter.add(1)
        return self._solve(y_hat)

    def solve_surrogate(self, y_hat: Tensor) -> Tensor:
        batch = y_hat.shape[0] if y_hat.ndim == 2 else 1
        self.counter.add(batch, tag="surrogate")
        return self._surrogate(y_hat)

    def decision_quality(self, y_hat: np.ndarray, y: np.ndarray) -> float:
        """objective(solve_exact(y_hat), y); "decision loss" for minimization domains."""
        return self.objective(self.solve_exact(y_hat), y)

    decision_loss = decision_quality

    def shortfall(self, value: float, value_at_truth: float) -> float:
        """Non-negative distance from the optimum, whatever the objective's sense."""
        return value_at_truth - value if self.is_maximization else value - value_at_truth

    def regret(self, y_hat: np.ndarray, y: np.ndarray) -> float:
        return self.shortfall(self.decision_quality(y_hat, y), self.decision_quality(y, y))

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "dim_y": self.dim_y, "is_maximization": self.is_maximization}


def split_sizes(cfg: DomainConfig) -> List[Tuple[str, int]]:
    return [("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)]
