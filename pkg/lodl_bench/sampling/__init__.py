"""
Sampling
Neighborhood samples of true labels scored by the exact oracle.
"""

from lodl_bench.sampling.sampler import (
    DEFAULT_ALPHA, STRATEGIES, SampleTable, SamplingConfig, build_sample_table, build_sample_tables,
    sample_labels,
)
from lodl_bench.sampling.store import SampleStore, read_table, write_table

__all__ = [
    "DEFAULT_ALPHA", "STRATEGIES", "SampleTable", "SamplingConfig", "build_sample_table",
    "build_sample_tables", "sample_labels", "SampleStore", "read_table", "write_table",
]
