"""
Domains
Benchmark predict-then-optimize problems and their synthetic datasets.
"""

from lodl_bench.domains.base import (
    DOMAIN_KINDS, DecisionProblem, Dataset, DomainConfig, InstanceRecord, OracleCounter,
)
from lodl_bench.domains.linear import TopKProblem, gen_linear_dataset, soft_topk_surrogate, topk_oracle
from lodl_bench.domains.webadv import (
    WebAdvProblem, gen_webadv_dataset, webadv_multilinear_surrogate, webadv_objective, webadv_oracle,
)
from lodl_bench.domains.portfolio import (
    PortfolioProblem, gen_portfolio_dataset, portfolio_oracle, portfolio_surrogate,
)
from lodl_bench.domains.pickmin import PickMinProblem
from lodl_bench.domains.io import config_fingerprint, read_dataset, write_dataset

GENERATORS = {
    "linear": gen_linear_dataset,
    "webadv": gen_webadv_dataset,
    "portfolio": gen_portfolio_dataset,
}


def generate_dataset(cfg: DomainConfig) -> Dataset:
    cfg.validate()
    return GENERATORS[cfg.kind](cfg)


def build_problem(dataset: Dataset) -> DecisionProblem:
    """The decision problem matching a dataset's domain."""
    cfg = dataset.config
    if cfg.kind == "linear":
        return TopKProblem.from_config(cfg)
    if cfg.kind == "webadv":
        return WebAdvProblem.from_config(cfg)
    return PortfolioProblem.from_dataset(dataset)


__all__ = [
    "DOMAIN_KINDS", "DecisionProblem", "Dataset", "DomainConfig", "InstanceRecord", "OracleCounter",
    "TopKProblem", "gen_linear_dataset", "soft_topk_surrogate", "topk_oracle",
    "WebAdvProblem", "gen_webadv_dataset", "webadv_multilinear_surrogate", "webadv_objective",
    "webadv_oracle", "PortfolioProblem", "gen_portfolio_dataset", "portfolio_oracle",
    "portfolio_surrogate", "PickMinProblem", "config_fingerprint", "read_dataset", "write_dataset",
    "generate_dataset", "build_problem",
]
