"""
Pytest configuration and shared fixtures for lodl_bench tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Make the package importable without installing it
REPO_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(REPO_ROOT))

from lodl_bench.domains import DomainConfig, build_problem, generate_dataset  # noqa: E402
from lodl_bench.losses import FitConfig  # noqa: E402
from lodl_bench.models import TrainConfig  # noqa: E402
from lodl_bench.sampling import SamplingConfig  # noqa: E402


@pytest.fixture
def linear_cfg():
    """A linear top-k domain small enough to train in milliseconds."""
    return DomainConfig.defaults("linear", n_items=6, budget=2, n_train=4, n_val=2, n_test=3, seed=0)


@pytest.fixture
def webadv_cfg():
    return DomainConfig.defaults("webadv", n_websites=3, n_users=2, budget=1, n_train=3, n_val=2, n_test=3, seed=0)


@pytest.fixture
def portfolio_cfg():
    return DomainConfig.defaults("portfolio", n_items=5, lam=0.1, n_train=4, n_val=2, n_test=3, seed=0)


@pytest.fixture
def linear_data(linear_cfg):
    dataset = generate_dataset(linear_cfg)
    return dataset, build_problem(dataset)


@pytest.fixture
def small_sampling():
    return SamplingConfig(strategy="all-perturbed", samples=20, alpha=1.0, seed=0)


@pytest.fixture
def quick_fit():
    return FitConfig(steps=30, lr=1.0, w_min=1e-2, rank=2, seed=0, nn_hidden=8)


@pytest.fixture
def quick_train():
    return TrainConfig(steps=5, lr=0.01, dfl_lr=0.005, seed=0, check_every=2, early_stopping=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config(tmp_path):
    """A TOML config for CLI runs on the tiny linear domain."""
    path = tmp_path / "lodl.toml"
    path.write_text("""
[run]
output_dir = "{out}"

[domain]
kind = "linear"
n_items = 6
budget = 2
n_train = 4
n_val = 2
n_test = 3

[sampling]
samples = 5

[fit]
steps = 10

[train]
steps = 3
check_every = 1
""".format(out=(tmp_path / "runs").as_posix()))
    return path
