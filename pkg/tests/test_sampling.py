"""
Tests for neighborhood sampling and sample table files.
"""

import sqlite3

import numpy as np
import pytest

from lodl_bench.errors import ConfigError, MissingArtifactError, StoreError, TruncatedFileError
from lodl_bench.losses import LossStore
from lodl_bench.sampling import (
    SampleStore, SamplingConfig, build_sample_table, build_sample_tables, read_table, sample_labels, write_table,
)


class TestSampleLabels:
    """Perturbation strategies."""

    def test_deterministic_per_seed(self):
        cfg = SamplingConfig(samples=8, alpha=0.5, seed=3)
        y = np.arange(4.0)
        np.testing.assert_array_equal(sample_labels(y, cfg, 7), sample_labels(y, cfg, 7))
        assert not np.array_equal(sample_labels(y, cfg, 7), sample_labels(y, cfg, 8))

    def test_one_perturbed_moves_one_coordinate(self):
        cfg = SamplingConfig(strategy="one-perturbed", samples=30, alpha=1.0)
        y = np.zeros(5)
        moved = np.count_nonzero(sample_labels(y, cfg), axis=1)
        assert np.all(moved == 1)

    def test_two_perturbed_moves_two_coordinates(self):
        cfg = SamplingConfig(strategy="two-perturbed", samples=30, alpha=1.0)
        moved = np.count_nonzero(sample_labels(np.zeros(5), cfg), axis=1)
        assert np.all(moved == 2)

    def test_two_perturbed_needs_two_coordinates(self):
        with pytest.raises(ConfigError):
            sample_labels(np.zeros(1), SamplingConfig(strategy="two-perturbed", samples=3))

    def test_all_perturbed_scale(self):
        cfg = SamplingConfig(samples=4000, alpha=0.05, seed=1)
        noise = sample_labels(np.zeros(3), cfg)
        assert np.std(noise) == pytest.approx(0.05, rel=0.05)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SamplingConfig(strategy="some-perturbed").validate()
        with pytest.raises(ConfigError):
            SamplingConfig(alpha=0.0).validate()


class TestSampleTables:
    """Scoring samples with the exact oracle."""

    def test_k_plus_one_oracle_calls(self, linear_data, small_sampling):
        dataset, problem = linear_data
        table = build_sample_table(dataset.train[0], problem, small_sampling)
        assert table.oracle_calls == small_sampling.samples + 1
        assert problem.counter.count("sampling") == small_sampling.samples + 1
        assert table.samples.shape == (20, 6)

    def test_truth_scores_best(self, linear_data, small_sampling):
        dataset, problem = linear_data
        table = build_sample_table(dataset.train[1], problem, small_sampling)
        assert table.dl_at_truth == pytest.approx(problem.objective(problem._solve(table.y_true), table.y_true))
        assert np.all(table.targets >= -1e-12)

    def test_thread_pool_matches_inline(self, linear_data, small_sampling):
        dataset, problem = linear_data
        inline = build_sample_tables(dataset.train[:2], problem, small_sampling)
        pooled = build_sample_tables(dataset.train[:2], problem, small_sampling, workers=2, pool="thread")
        assert all(a.equals(b) for a, b in zip(inline, pooled))
        assert problem.counter.count("sampling") == 2 * 2 * (small_sampling.samples + 1)


class TestSampleStore:
    """SQLite table files."""

    def test_round_trip_is_bit_exact(self, tmp_path, linear_data, small_sampling):
        dataset, problem = linear_data
        table = build_sample_table(dataset.train[0], problem, small_sampling)
        loaded = read_table(write_table(tmp_path / "t.sqlite", table))
        assert loaded.equals(table)
        assert loaded.config == small_sampling

    def test_many_tables_in_order(self, tmp_path, linear_data, small_sampling):
        dataset, problem = linear_data
        tables = build_sample_tables(dataset.train, problem, small_sampling)
        store = SampleStore(tmp_path / "all.sqlite", create=True)
        store.put_many(tables, small_sampling, {"seed": 0})
        assert store.instance_ids() == [t.instance_id for t in tables]
        assert store.get_meta("seed") == 0

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            read_table(tmp_path / "nothing.sqlite")

    def test_missing_instance(self, tmp_path, linear_data, small_sampling):
        dataset, problem = linear_data
        path = write_table(tmp_path / "t.sqlite", build_sample_table(dataset.train[0], problem, small_sampling))
        with pytest.raises(MissingArtifactError):
            read_table(path, instance_id=999)

    def test_short_blob_is_truncated(self, tmp_path, linear_data, small_sampling):
        dataset, problem = linear_data
        path = write_table(tmp_path / "t.sqlite", build_sample_table(dataset.train[0], problem, small_sampling))
        conn = sqlite3.connect(str(path))
        conn.execute("UPDATE sample_tables SET samples = substr(samples, 1, 16)")
        conn.commit()
        conn.close()
        with pytest.raises(TruncatedFileError):
            read_table(path)

    def test_wrong_artifact_kind(self, tmp_path):
        path = tmp_path / "losses.sqlite"
        LossStore(path, create=True)
        with pytest.raises(StoreError):
            SampleStore(path)
