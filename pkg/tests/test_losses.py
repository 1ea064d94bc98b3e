"""
Tests for the learned loss families, their fitting and their persistence.
"""

import sqlite3

import numpy as np
import pytest

from lodl_bench.errors import ConfigError, TruncatedFileError
from lodl_bench.gradcore import DenseStack
from lodl_bench.harness import mae_gaussian_neighborhood
from lodl_bench.losses import (
    CONVEX_FAMILIES, DirectedQuadratic, DirectedWeightedMSE, FitConfig, LossStore, NNLoss, Quadratic, WeightedMSE,
    eval_batch, eval_loss, fit_gd, fit_losses, fit_table, fit_weighted_mse_closed_form, grad_loss, psd_certificate,
)
from lodl_bench.losses.psd import smallest_eigenvalue
from lodl_bench.sampling import SampleTable, build_sample_tables


def quadratic_table(weights, samples=40, strategy="all", seed=0, instance_id=0):
    """A minimization table whose shortfall is exactly sum_i w_i d_i^2."""
    rng = np.random.default_rng(seed)
    dim = len(weights)
    y = rng.standard_normal(dim)
    if strategy == "one":
        d = np.zeros((samples, dim))
        d[np.arange(samples), np.arange(samples) % dim] = rng.standard_normal(samples)
    else:
        d = rng.standard_normal((samples, dim))
    losses = (d * d) @ np.asarray(weights, dtype=np.float64)
    return SampleTable(instance_id=instance_id, y_true=y, samples=y + d, losses=losses, dl_at_truth=0.0,
                       maximize=False)


def numeric_gradient(params, y_hat, y, h=1e-6):
    grad = np.zeros_like(y_hat)
    for i in range(y_hat.size):
        step = np.zeros_like(y_hat)
        step[i] = h
        grad[i] = (eval_loss(params, y_hat + step, y) - eval_loss(params, y_hat - step, y)) / (2 * h)
    return grad


def random_convex_params(family, rng, dim):
    if family == "weightedmse":
        return WeightedMSE(w=rng.uniform(0.01, 3.0, dim))
    if family == "directedweightedmse":
        return DirectedWeightedMSE(w_plus=rng.uniform(0.01, 3.0, dim), w_minus=rng.uniform(0.01, 3.0, dim))
    if family == "quadratic":
        return Quadratic(L=rng.standard_normal((dim, 2)), w_min=0.01)
    return DirectedQuadratic(*[np.abs(rng.standard_normal((dim, 2))) for _ in range(4)], w_min=0.01)


class TestFamilies:
    """Values and gradients of each family."""

    def test_weighted_mse_by_hand(self):
        params = WeightedMSE(w=np.array([2.0, 3.0]))
        assert eval_loss(params, np.array([1.0, -1.0]), np.zeros(2)) == pytest.approx(5.0)

    def test_directed_weights_by_sign(self):
        params = DirectedWeightedMSE(w_plus=np.array([1.0, 1.0]), w_minus=np.array([4.0, 4.0]))
        assert eval_loss(params, np.array([2.0, 0.0]), np.zeros(2)) == pytest.approx(4.0)
        assert eval_loss(params, np.array([-2.0, 0.0]), np.zeros(2)) == pytest.approx(16.0)

    def test_every_family_is_zero_at_the_truth(self, rng):
        y = rng.standard_normal(3)
        factors = [np.abs(rng.standard_normal((3, 2))) for _ in range(4)]
        families = [
            WeightedMSE(w=np.ones(3)),
            DirectedWeightedMSE(w_plus=np.ones(3), w_minus=np.full(3, 2.0)),
            Quadratic(L=rng.standard_normal((3, 2)), w_min=0.01),
            DirectedQuadratic(*factors, w_min=0.01),
            NNLoss(network=DenseStack.create([3, 5, 5, 5, 1], rng), scale_in=2.0, scale_out=3.0),
        ]
        for params in families:
            assert eval_loss(params, y, y) == pytest.approx(0.0, abs=1e-12), params.family

    def test_quadratic_gradient(self, rng):
        params = Quadratic(L=rng.standard_normal((4, 2)), w_min=0.1)
        y, y_hat = rng.standard_normal(4), rng.standard_normal(4)
        np.testing.assert_allclose(grad_loss(params, y_hat, y), numeric_gradient(params, y_hat, y), atol=1e-6)

    def test_directed_quadratic_gradient(self, rng):
        factors = [np.abs(rng.standard_normal((4, 2))) for _ in range(4)]
        params = DirectedQuadratic(*factors, w_min=0.05)
        y = np.zeros(4)
        y_hat = np.array([0.7, -0.3, 1.2, -0.9])
        np.testing.assert_allclose(grad_loss(params, y_hat, y), numeric_gradient(params, y_hat, y), atol=1e-6)

    def test_nn_gradient(self, rng):
        params = NNLoss(network=DenseStack.create([3, 4, 4, 4, 1], rng), scale_in=0.5, scale_out=2.0)
        y, y_hat = np.zeros(3), np.array([0.3, -0.2, 0.4])
        np.testing.assert_allclose(grad_loss(params, y_hat, y), numeric_gradient(params, y_hat, y), atol=1e-5)

    def test_batch_matches_single(self, rng):
        params = Quadratic(L=rng.standard_normal((3, 2)), w_min=0.01)
        y = rng.standard_normal(3)
        y_hats = rng.standard_normal((5, 3))
        singles = [eval_loss(params, row, y) for row in y_hats]
        np.testing.assert_allclose(eval_batch(params, y_hats, y), singles)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_loss(WeightedMSE(w=np.ones(2)), np.ones(3), np.ones(2))

    @pytest.mark.parametrize("family", CONVEX_FAMILIES)
    def test_chords_lie_above_the_loss(self, family):
        rng = np.random.default_rng(7)
        for _ in range(10):
            params = random_convex_params(family, rng, 4)
            y = rng.standard_normal(4)
            a = y + 2.0 * rng.standard_normal((100, 4))
            b = y + 2.0 * rng.standard_normal((100, 4))
            t = rng.uniform(0.0, 1.0, (100, 1))
            middle = eval_batch(params, t * a + (1 - t) * b, y)
            chord = t[:, 0] * eval_batch(params, a, y) + (1 - t[:, 0]) * eval_batch(params, b, y)
            assert np.all(middle <= chord + 1e-9 * np.maximum(1.0, chord))


class TestClosedForm:
    """Non-negative least squares for the weighted families."""

    def test_recovers_weights_from_single_coordinate_samples(self):
        table = quadratic_table([3.0, 3.0], samples=20, strategy="one")
        params = fit_weighted_mse_closed_form(table, FitConfig(w_min=1e-2))
        np.testing.assert_allclose(params.w, [3.0, 3.0], rtol=1e-9)

    def test_zero_targets_sit_on_the_floor(self):
        table = quadratic_table([0.0, 0.0, 0.0], samples=10)
        params = fit_weighted_mse_closed_form(table, FitConfig(w_min=0.05))
        np.testing.assert_allclose(params.w, [0.05, 0.05, 0.05])

    def test_negative_weights_clamp_to_floor(self):
        table = quadratic_table([2.0, -1.0], samples=30, strategy="one")
        params = fit_weighted_mse_closed_form(table, FitConfig(w_min=0.01))
        assert params.w[0] == pytest.approx(2.0)
        assert params.w[1] == pytest.approx(0.01)

    def test_directed_variant(self):
        table = quadratic_table([1.5, 0.5], samples=40, strategy="one")
        params = fit_table(table, "directedweightedmse", FitConfig(), method="closed-form")
        np.testing.assert_allclose(params.w_plus, [1.5, 0.5], rtol=1e-9)
        np.testing.assert_allclose(params.w_minus, [1.5, 0.5], rtol=1e-9)

    def test_no_closed_form_for_quadratic(self):
        with pytest.raises(ValueError):
            fit_table(quadratic_table([1.0]), "quadratic", FitConfig(), method="closed-form")

    def test_agrees_with_long_gradient_descent(self):
        rng = np.random.default_rng(11)
        for seed in range(20):
            table = quadratic_table(rng.uniform(0.5, 3.0, 4), samples=40, strategy="one", seed=seed)
            exact = fit_weighted_mse_closed_form(table, FitConfig())
            descended = fit_gd(table, "weightedmse", FitConfig(steps=2000))
            assert np.max(np.abs(exact.w - descended.w)) <= 1e-3, seed


class TestGradientFitting:
    """Projected gradient descent on each family."""

    def test_weighted_mse_converges(self):
        table = quadratic_table([3.0, 1.0], samples=200)
        params = fit_gd(table, "weightedmse", FitConfig(steps=200))
        np.testing.assert_allclose(params.w, [3.0, 1.0], rtol=1e-2)

    def test_realizable_targets_fit_to_small_error(self):
        weights = [3.0, 1.0, 2.0]
        params = fit_gd(quadratic_table(weights, samples=200), "weightedmse", FitConfig(steps=500))
        fresh = quadratic_table(weights, samples=100, seed=1)
        assert mae_gaussian_neighborhood({0: params}, [fresh]) <= 1e-3

    def test_objective_never_increases(self):
        table = quadratic_table([2.0, 0.5, 1.0], samples=60)
        for family in ("weightedmse", "quadratic", "directedquadratic"):
            curve = fit_gd(table, family, FitConfig(steps=25)).info["curve"]
            assert np.all(np.diff(curve) <= 1e-12 * max(1.0, curve[0])), family

    def test_weights_respect_floor(self):
        table = quadratic_table([0.0, 4.0], samples=50)
        params = fit_gd(table, "directedweightedmse", FitConfig(steps=50, w_min=0.1))
        assert np.all(params.w_plus >= 0.1) and np.all(params.w_minus >= 0.1)

    def test_zero_targets_give_floor_losses(self):
        table = quadratic_table([0.0, 0.0], samples=10)
        params = fit_gd(table, "weightedmse", FitConfig(w_min=0.02))
        np.testing.assert_allclose(params.w, [0.02, 0.02])
        assert params.info["final_objective"] == 0.0

    def test_directed_quadratic_factors_stay_non_negative(self):
        table = quadratic_table([1.0, 2.0], samples=50)
        params = fit_gd(table, "directedquadratic", FitConfig(steps=30))
        for block in (params.L_pp, params.L_pm, params.L_mp, params.L_mm):
            assert np.all(block >= 0)
        assert psd_certificate(params, dense=True).ok

    def test_quadratic_fit_is_convex(self):
        params = fit_gd(quadratic_table([1.0, 2.0, 0.5], samples=50), "quadratic", FitConfig(steps=30))
        report = psd_certificate(params, dense=True)
        assert report.ok
        assert report.min_eigenvalue >= params.w_min * (1 - 1e-6)

    def test_nn_fit_improves(self):
        table = quadratic_table([1.0, 2.0], samples=30)
        params = fit_gd(table, "nn", FitConfig(steps=20, nn_hidden=8))
        assert params.info["curve"][-1] <= params.info["curve"][0]
        assert eval_loss(params, table.y_true, table.y_true) == pytest.approx(0.0, abs=1e-12)

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            fit_gd(quadratic_table([1.0]), "cubic", FitConfig())

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            fit_gd(quadratic_table([1.0]), "weightedmse", FitConfig(w_min=0.0))

    def test_fit_losses_keys_by_instance(self, linear_data, small_sampling, quick_fit):
        dataset, problem = linear_data
        tables = build_sample_tables(dataset.train, problem, small_sampling)
        fitted = fit_losses(tables, "weightedmse", quick_fit)
        assert sorted(fitted) == [r.instance_id for r in dataset.train]


class TestPsdCertificate:
    """Smallest-eigenvalue checks."""

    def test_zero_factor_gives_the_floor(self):
        report = psd_certificate(Quadratic(L=np.zeros((4, 2)), w_min=0.03))
        assert report.blocks["H"] == pytest.approx(0.03, abs=1e-6)
        assert report.ok

    def test_power_iteration_matches_dense(self, rng):
        basis, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        matrix = basis @ np.diag([0.5, 2.0, 5.0, 9.0]) @ basis.T
        assert smallest_eigenvalue(matrix) == pytest.approx(smallest_eigenvalue(matrix, dense=True), abs=1e-6)

    def test_directed_blocks(self, rng):
        factors = [np.abs(rng.standard_normal((3, 2))) for _ in range(4)]
        report = psd_certificate(DirectedQuadratic(*factors, w_min=0.01), dense=True)
        assert set(report.blocks) == {"plus", "minus", "stacked"}
        assert report.ok

    def test_weighted_family_has_no_certificate(self):
        with pytest.raises(ValueError):
            psd_certificate(WeightedMSE(w=np.ones(2)))


class TestLossStore:
    """Fitted-loss files."""

    def test_round_trip(self, tmp_path, rng):
        factors = [np.abs(rng.standard_normal((3, 2))) for _ in range(4)]
        fitted = {
            0: DirectedQuadratic(*factors, w_min=0.01, info={"final_objective": 0.5, "steps": 7}),
            1: DirectedQuadratic(*[f * 2 for f in factors], w_min=0.01),
        }
        labels = {0: np.ones(3), 1: np.zeros(3)}
        store = LossStore(tmp_path / "l.sqlite", create=True)
        store.put_many(fitted, labels, {"family": "directedquadratic"})
        loaded = store.get_family("directedquadratic")
        assert sorted(loaded) == [0, 1]
        np.testing.assert_array_equal(loaded[1].L_mm, fitted[1].L_mm)
        assert loaded[0].info["steps"] == 7
        assert store.families() == ["directedquadratic"]
        np.testing.assert_array_equal(store.labels("directedquadratic")[0], np.ones(3))

    def test_nn_round_trip(self, tmp_path, rng):
        params = NNLoss(network=DenseStack.create([2, 4, 4, 4, 1], rng), scale_in=0.3, scale_out=5.0)
        store = LossStore(tmp_path / "nn.sqlite", create=True)
        store.put(3, params, np.zeros(2))
        loaded = store.get(3, "nn")
        point = np.array([0.4, -0.1])
        assert eval_loss(loaded, point, np.zeros(2)) == eval_loss(params, point, np.zeros(2))

    def test_parameter_count_mismatch(self, tmp_path):
        path = tmp_path / "l.sqlite"
        LossStore(path, create=True).put(0, WeightedMSE(w=np.ones(3)), np.zeros(3))
        conn = sqlite3.connect(str(path))
        conn.execute("UPDATE fitted_losses SET shapes = '[[4]]'")
        conn.commit()
        conn.close()
        with pytest.raises(TruncatedFileError):
            LossStore(path).get(0, "weightedmse")
