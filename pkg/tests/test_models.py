"""
Tests for predictive models, checkpoints and the three training regimes.
"""

import json

import numpy as np
import pytest

from lodl_bench.domains import build_problem, generate_dataset
from lodl_bench.errors import FormatVersionError, MissingArtifactError, ShapeError, TrainingError, TruncatedFileError
from lodl_bench.losses import WeightedMSE
from lodl_bench.models import (
    TrainConfig, create_model, evaluate_dq, load_model, model_for_domain, predict, predict_batch, save_model,
    train_dfl, train_model, train_two_stage, train_with_lodl,
)


def unit_losses(instances):
    return {i.instance_id: WeightedMSE(w=np.ones(len(i.y_true))) for i in instances}


class TestPredictiveModel:
    """Shapes of the per-item models."""

    def test_linear_domain_model(self, linear_data):
        dataset, _ = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        assert model.kind == "linear"
        assert model.network.sizes == [1, 1]
        assert predict(model, dataset.train[0]).shape == (6,)
        assert set(model.slope_intercept()) == {"slope", "intercept"}

    def test_webadv_model_predicts_every_pair(self, webadv_cfg):
        dataset = generate_dataset(webadv_cfg)
        model = model_for_domain(webadv_cfg, seed=0, hidden=16, sample=dataset.train[0])
        assert model.kind == "mlp"
        assert predict_batch(model, dataset.test).shape == (3, webadv_cfg.n_websites * webadv_cfg.n_users)

    def test_portfolio_outputs_are_bounded(self, portfolio_cfg):
        dataset = generate_dataset(portfolio_cfg)
        model = model_for_domain(portfolio_cfg, seed=0, hidden=16, sample=dataset.train[0])
        out = predict_batch(model, dataset.train)
        assert out.shape == (4, 5)
        assert np.all(np.abs(out) < 1.0)
        assert model.slope_intercept() is None

    def test_bad_feature_shape(self, rng):
        model = create_model("linear", 2, 1, rng)
        with pytest.raises(ShapeError):
            model.forward_batch(np.ones((3, 2)))
        with pytest.raises(ShapeError):
            model.forward_batch(np.ones((1, 3, 5)))

    def test_unknown_kind(self, rng):
        with pytest.raises(ValueError):
            create_model("transformer", 2, 1, rng)


class TestCheckpoints:
    """JSON model files."""

    def test_round_trip(self, tmp_path, rng):
        model = create_model("mlp", 3, 1, rng, tanh_output=True, hidden=4)
        path = save_model(tmp_path / "m" / "model.json", model, {"seed": 1})
        loaded = load_model(path)
        features = rng.standard_normal((5, 3))
        np.testing.assert_array_equal(predict(loaded, features), predict(model, features))
        assert loaded.network.tanh_output

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_model(tmp_path / "none.json")

    def test_unreadable_checkpoint(self, tmp_path, rng):
        path = save_model(tmp_path / "model.json", create_model("linear", 1, 1, rng))
        path.write_text(path.read_text()[:20])
        with pytest.raises(TruncatedFileError):
            load_model(path)

    def test_short_parameter_list(self, tmp_path, rng):
        path = save_model(tmp_path / "model.json", create_model("mlp", 2, 1, rng, hidden=3))
        payload = json.loads(path.read_text())
        payload["params"] = payload["params"][:-1]
        path.write_text(json.dumps(payload))
        with pytest.raises(TruncatedFileError):
            load_model(path)

    def test_unknown_version(self, tmp_path, rng):
        path = save_model(tmp_path / "model.json", create_model("linear", 1, 1, rng))
        payload = json.loads(path.read_text())
        payload["format_version"] = 7
        path.write_text(json.dumps(payload))
        with pytest.raises(FormatVersionError):
            load_model(path)


class TestTrainingRegimes:
    """Two-stage, LODL and DFL on the tiny linear domain."""

    def test_unit_weighted_losses_reproduce_two_stage(self, linear_data, quick_train):
        dataset, _ = linear_data
        start = model_for_domain(dataset.config, seed=3, sample=dataset.train[0])
        mse = train_two_stage(start, dataset.train, quick_train)
        lodl = train_with_lodl(start, dataset.train, unit_losses(dataset.train), quick_train)
        np.testing.assert_allclose(lodl.model.network.flat(), mse.model.network.flat(), rtol=1e-12, atol=0)
        np.testing.assert_allclose(lodl.loss_curve, mse.loss_curve, rtol=1e-12)

    def test_two_stage_loss_decreases(self, linear_data):
        dataset, _ = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        result = train_two_stage(model, dataset.train, TrainConfig(steps=50, lr=0.01, early_stopping=False))
        assert result.loss_curve[-1] < result.loss_curve[0]
        assert len(result.loss_curve) == 50

    def test_lodl_never_calls_the_oracle(self, linear_data, quick_train):
        dataset, problem = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        train_with_lodl(model, dataset.train, unit_losses(dataset.train), quick_train, problem=problem)
        assert problem.counter.count() == 0
        assert problem.counter.count("surrogate") == 0

    def test_lodl_needs_every_loss(self, linear_data, quick_train):
        dataset, _ = linear_data
        losses = unit_losses(dataset.train[1:])
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        with pytest.raises(MissingArtifactError):
            train_with_lodl(model, dataset.train, losses, quick_train)

    def test_dfl_solves_one_surrogate_per_instance_per_step(self, linear_data, quick_train):
        dataset, problem = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        result = train_dfl(model, dataset.train, problem, quick_train)
        assert problem.counter.count("surrogate") == quick_train.steps * len(dataset.train)
        assert len(result.surrogate_seconds) == quick_train.steps
        assert problem.counter.count() == 0

    def test_early_stopping_tracks_validation(self, linear_data):
        dataset, problem = linear_data
        cfg = TrainConfig(steps=4, lr=0.01, check_every=2, early_stopping=True, trace=True)
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        result = train_two_stage(model, dataset.train, cfg, problem=problem, val=dataset.val)
        assert [step for step, _ in result.val_curve] == [2, 4]
        assert result.best_step in (2, 4)
        assert problem.counter.count("evaluation") == 2 * len(dataset.val)
        assert sorted(result.trace) == [2, 4]
        assert result.trace[4].shape == (len(dataset.train), 6)

    def test_dispatch_errors(self, linear_data, quick_train):
        dataset, problem = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        with pytest.raises(MissingArtifactError):
            train_model("lodl", model, dataset.train, quick_train, problem)
        with pytest.raises(TrainingError):
            train_model("dfl", model, dataset.train, quick_train)
        with pytest.raises(ValueError):
            train_model("spo", model, dataset.train, quick_train, problem)


class TestEvaluation:

    def test_one_exact_solve_per_instance(self, linear_data):
        dataset, problem = linear_data
        model = model_for_domain(dataset.config, seed=0, sample=dataset.train[0])
        result = evaluate_dq(model, dataset.test, problem)
        assert result.instance_ids == [r.instance_id for r in dataset.test]
        assert problem.counter.count("evaluation") == len(dataset.test)
        assert result.values.shape == (3,)

    def test_true_labels_score_the_optimum(self, linear_data):
        dataset, problem = linear_data
        for record in dataset.test:
            optimum = problem.decision_quality(record.y_true, record.y_true)
            assert optimum >= problem.decision_quality(-record.y_true, record.y_true)

    def test_portfolio_evaluation_runs(self, portfolio_cfg):
        dataset = generate_dataset(portfolio_cfg)
        problem = build_problem(dataset)
        model = model_for_domain(portfolio_cfg, seed=0, hidden=8, sample=dataset.train[0])
        result = evaluate_dq(model, dataset.test, problem)
        assert np.all(np.isfinite(result.values))
