"""
Harness
Experiment orchestration, normalization, neighborhood diagnostics, benchmarks and reports.
"""

from lodl_bench.harness.metrics import (
    dq_mae_line, mae_empirical_neighborhood, mae_gaussian_neighborhood, normalize_dq, optimal_reference, pearson,
    random_reference,
)
from lodl_bench.harness.pipeline import METHODS, ArtifactCache, SeedContext, Settings
from lodl_bench.harness.experiments import (
    RUN_COLUMNS, HarnessConfig, RunRecord, ablation_suite, run_experiment, run_seed,
)
from lodl_bench.harness.benchmarks import TimingRecord, benchmark_amortization, benchmark_parallel, cost_model
from lodl_bench.harness.reports import render_summary, write_experiment_reports, write_json, write_runs_csv

__all__ = [
    "dq_mae_line", "mae_empirical_neighborhood", "mae_gaussian_neighborhood", "normalize_dq",
    "optimal_reference", "pearson", "random_reference", "METHODS", "ArtifactCache", "SeedContext", "Settings",
    "RUN_COLUMNS", "HarnessConfig", "RunRecord", "ablation_suite", "run_experiment", "run_seed",
    "TimingRecord", "benchmark_amortization", "benchmark_parallel", "cost_model", "render_summary",
    "write_experiment_reports", "write_json", "write_runs_csv",
]
