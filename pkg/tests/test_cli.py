"""
Tests for the lodl command-line interface and its layered configuration.
"""

import json
from pathlib import Path

import pandas as pd
import pytest
import toml
from click.testing import CliRunner

from lodl_bench.cli import cli
from lodl_bench.cli.config import DEFAULTS, env_overrides, merge, resolve
from lodl_bench.errors import ConfigError


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, config, *args, env=None):
    return runner.invoke(cli, ["-q", "--config", str(config), *args], env=env)


class TestConfigLayers:
    """Defaults < file < environment < flags."""

    def test_environment_values_are_typed(self):
        layers = env_overrides({"LODL_SAMPLING_SAMPLES": "7", "LODL_TRAIN_EARLY_STOPPING": "false",
                                "OTHER_SAMPLING_SAMPLES": "9"})
        assert layers == {"sampling": {"samples": 7}, "train": {"early_stopping": False}}

    def test_merge_is_per_key(self):
        merged = merge({"fit": {"steps": 100, "lr": 1.0}}, {"fit": {"steps": 5}})
        assert merged == {"fit": {"steps": 5, "lr": 1.0}}

    def test_flags_beat_environment(self, tiny_config):
        config = resolve(tiny_config, {"sampling": {"samples": 9}}, environ={"LODL_SAMPLING_SAMPLES": "7"})
        assert config["sampling"]["samples"] == 9
        assert resolve(tiny_config, environ={"LODL_SAMPLING_SAMPLES": "7"})["sampling"]["samples"] == 7

    def test_domain_defaults_fill_in(self):
        config = resolve(flags={"domain": {"kind": "webadv"}}, environ={})
        assert config["domain"]["budget"] == 2
        assert config["sampling"]["alpha"] == 0.05

    def test_yaml_config(self, tmp_path):
        path = tmp_path / "lodl.yaml"
        path.write_text("domain:\n  kind: portfolio\nfit:\n  family: nn\n")
        config = resolve(path, environ={})
        assert config["fit"]["family"] == "nn"
        assert config["domain"]["lam"] == 0.1

    def test_shipped_defaults_match_built_in(self):
        config = resolve(Path(__file__).parent.parent / "config" / "default.toml", environ={})
        for section in ("run", "fit", "train", "harness"):
            assert config[section] == DEFAULTS[section], section
        assert config["sampling"] == {**DEFAULTS["sampling"], "alpha": 1.0}

    def test_unknown_key_is_named(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[domain]\nkind = \"linear\"\n\n[sampling]\nalpa = 1.0\n")
        with pytest.raises(ConfigError) as excinfo:
            resolve(path, environ={})
        assert excinfo.value.key == "sampling.alpa"


class TestCommandErrors:
    """Exit codes and messages of failing commands."""

    def test_unknown_config_key_exits_1(self, runner, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[domain]\nkind = \"linear\"\n\n[sampling]\nalpa = 1.0\n")
        result = invoke(runner, path, "show-config")
        assert result.exit_code == 1
        assert "unknown key 'sampling.alpa'" in result.output

    def test_missing_domain_exits_1(self, runner, tmp_path):
        result = runner.invoke(cli, ["-q", "--output-dir", str(tmp_path), "gen-data"])
        assert result.exit_code == 1
        assert "valid domains: linear, webadv, portfolio" in result.output

    def test_unknown_domain_exits_1(self, runner, tmp_path):
        result = runner.invoke(cli, ["-q", "--output-dir", str(tmp_path), "gen-data", "--domain", "stocks"])
        assert result.exit_code == 1
        assert "❌ gen-data failed" in result.output

    def test_fit_before_sample_exits_2(self, runner, tiny_config):
        assert invoke(runner, tiny_config, "gen-data").exit_code == 0
        result = invoke(runner, tiny_config, "fit", "--family", "weightedmse")
        assert result.exit_code == 2
        assert "missing sample table" in result.output

    def test_sample_before_data_exits_2(self, runner, tiny_config):
        result = invoke(runner, tiny_config, "sample")
        assert result.exit_code == 2
        assert "run gen-data first" in result.output

    def test_unknown_training_method(self, runner, tiny_config):
        result = invoke(runner, tiny_config, "train", "--method", "spo")
        assert result.exit_code == 2


class TestShowConfig:

    def test_defaults_and_domain_alpha(self, runner):
        result = runner.invoke(cli, ["-q", "show-config", "--domain", "portfolio"], env={})
        assert result.exit_code == 0, result.output
        config = toml.loads(result.output)
        assert config["sampling"]["alpha"] == 0.05
        assert config["sampling"]["samples"] == 5000
        assert config["fit"]["family"] == "directedquadratic"

    def test_environment_override(self, runner, tiny_config):
        result = invoke(runner, tiny_config, "show-config", env={"LODL_SAMPLING_SAMPLES": "7"})
        assert toml.loads(result.output)["sampling"]["samples"] == 7

    def test_seed_flag_beats_environment(self, runner, tiny_config):
        env = {"LODL_RUN_SEED": "5"}
        assert toml.loads(invoke(runner, tiny_config, "show-config", env=env).output)["run"]["seed"] == 5
        result = runner.invoke(cli, ["-q", "--config", str(tiny_config), "--seed", "3", "show-config"], env=env)
        assert toml.loads(result.output)["run"]["seed"] == 3


class TestPipelineCommands:
    """gen-data -> sample -> fit -> train -> eval on the tiny linear domain."""

    def test_sample_twice_hits_the_cache(self, runner, tiny_config):
        invoke(runner, tiny_config, "gen-data")
        first = invoke(runner, tiny_config, "sample")
        assert first.exit_code == 0, first.output
        assert "with 24 oracle calls" in first.output
        second = invoke(runner, tiny_config, "sample")
        assert "Cache hit" in second.output
        assert "0 oracle calls" in second.output

    def test_full_flow(self, runner, tiny_config, tmp_path):
        for args in (["gen-data"], ["sample"], ["fit", "--family", "weightedmse"],
                     ["train", "--method", "weightedmse"], ["eval", "--method", "weightedmse", "--json"]):
            result = invoke(runner, tiny_config, *args)
            assert result.exit_code == 0, f"{args}: {result.output}"
        assert json.loads(result.output)["method"] == "weightedmse"
        runs = tmp_path / "runs"
        assert (runs / "models" / "linear-seed0-weightedmse-init0.json").exists()
        report = json.loads((runs / "reports" / "eval-linear-seed0-weightedmse-init0.json").read_text())
        assert report["method"] == "weightedmse"
        assert len(report["per_instance"]) == 3
        assert report["optimal_ref"] > report["random_ref"]

    def test_fit_prints_certificate(self, runner, tiny_config):
        invoke(runner, tiny_config, "gen-data")
        invoke(runner, tiny_config, "sample")
        result = invoke(runner, tiny_config, "fit", "--family", "quadratic")
        assert result.exit_code == 0, result.output
        assert "0 failed certificates" in result.output

    def test_two_stage_train_and_eval(self, runner, tiny_config):
        invoke(runner, tiny_config, "gen-data")
        assert invoke(runner, tiny_config, "train").exit_code == 0
        result = invoke(runner, tiny_config, "eval")
        assert result.exit_code == 0, result.output
        assert "two-stage: normalized DQ" in result.output

    def test_eval_without_checkpoint_exits_2(self, runner, tiny_config):
        invoke(runner, tiny_config, "gen-data")
        result = invoke(runner, tiny_config, "eval", "--method", "dfl")
        assert result.exit_code == 2
        assert "missing model checkpoint" in result.output


@pytest.mark.slow
class TestReportCommands:

    def test_reproduce_table1(self, runner, tiny_config, tmp_path):
        result = invoke(runner, tiny_config, "reproduce-table1", "--method", "random", "--method", "optimal",
                        "--method", "two-stage", "--seeds", "1", "--inits", "1")
        assert result.exit_code == 0, result.output
        runs = pd.read_csv(tmp_path / "runs" / "reports" / "runs.csv")
        assert list(runs["method"]) == ["random", "optimal", "two-stage"]
        assert runs.loc[runs["method"] == "optimal", "normalized_dq"].item() == 1.0
        assert (tmp_path / "runs" / "reports" / "summary.md").exists()

    def test_bench_amortize(self, runner, tiny_config, tmp_path):
        result = invoke(runner, tiny_config, "bench-amortize", "--family", "weightedmse", "--model-counts", "1,2",
                        "--dfl-models", "1")
        assert result.exit_code == 0, result.output
        rows = json.loads((tmp_path / "runs" / "reports" / "bench-amortize.json").read_text())
        assert [row["models"] for row in rows] == [1, 2]

    def test_bad_counts_exit_1(self, runner, tiny_config):
        result = invoke(runner, tiny_config, "bench-parallel", "--worker-counts", "1,two")
        assert result.exit_code == 1
        assert "harness.worker_counts" in result.output
