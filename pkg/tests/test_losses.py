import numpy as np
import pytest

import avgmix
from avgmix import losses
from avgmix.data import Dataset, Sample
from avgmix.errors import (
    DimensionMismatchError,
    InvalidArgumentError,
    InvalidSampleError,
)

LSQ2 = avgmix.least_squares(2)
LOGIT0 = avgmix.ridge_logistic(3, 0.0)
PATH = avgmix.pathological_1d()


class TestValue:
    def test_least_squares_direct(self):
        s = Sample(features=[1.0, 1.0], target=2.0)
        assert avgmix.loss_value(LSQ2, np.array([1.0, 2.0]), s) == 0.5

    def test_logistic_at_zero_is_log2(self):
        for d in (1, 3, 7):
            model = avgmix.ridge_logistic(d, 0.0)
            s = Sample(features=np.arange(1, d + 1, dtype=float), target=-1.0)
            got = avgmix.loss_value(model, np.zeros(d), s)
            assert got == pytest.approx(np.log(2.0), rel=1e-15)

    def test_pathological_branches(self):
        assert avgmix.loss_value(PATH, np.array([1.0]), Sample([0.0], 0.0)) == 0.0
        assert avgmix.loss_value(PATH, np.array([-1.0]), Sample([1.0], 0.0)) == 0.0

    def test_logistic_stable_for_huge_margins(self):
        model = avgmix.ridge_logistic(1, 0.0)
        v = avgmix.loss_value(model, np.array([1000.0]), Sample([1.0], -1.0))
        assert np.isfinite(v) and v == pytest.approx(1000.0)
        v2 = avgmix.loss_value(model, np.array([1000.0]), Sample([1.0], 1.0))
        assert 0.0 <= v2 < 1e-200


class TestGradient:
    def test_least_squares_chain_rule(self):
        s = Sample(features=[1.0, 1.0], target=2.0)
        got = avgmix.loss_gradient(LSQ2, np.array([1.0, 2.0]), s)
        np.testing.assert_allclose(got, [1.0, 1.0])

    def test_logistic_at_zero(self):
        s = Sample(features=[2.0, 0.0, 1.0], target=1.0)
        got = avgmix.loss_gradient(LOGIT0, np.zeros(3), s)
        np.testing.assert_allclose(got, -0.5 * np.array([2.0, 0.0, 1.0]))

    def test_pathological_kink_uses_right_derivative(self):
        got = avgmix.loss_gradient(PATH, np.array([0.0]), Sample([1.0], 0.0))
        np.testing.assert_allclose(got, [1.0])


class TestHessian:
    def test_least_squares_outer_product(self):
        s = Sample(features=[1.0, 2.0], target=0.0)
        got = avgmix.loss_hessian(LSQ2, np.zeros(2), s)
        np.testing.assert_allclose(got, [[1.0, 2.0], [2.0, 4.0]])

    def test_logistic_quarter_plus_ridge(self):
        model = avgmix.ridge_logistic(3, 1e-6)
        e1 = np.array([1.0, 0.0, 0.0])
        got = avgmix.loss_hessian(model, np.zeros(3), Sample(e1, 1.0))
        expected = 0.25 * np.outer(e1, e1) + 1e-6 * np.eye(3)
        np.testing.assert_allclose(got, expected)

    def test_pathological_hessian_branches(self):
        assert avgmix.loss_hessian(PATH, np.array([3.0]), Sample([0.0], 0.0))[0, 0] == 2.0
        assert avgmix.loss_hessian(PATH, np.array([-1.0]), Sample([1.0], 0.0))[0, 0] == 2.0
        assert avgmix.loss_hessian(PATH, np.array([1.0]), Sample([1.0], 0.0))[0, 0] == 0.0


def _random_point(rng, model):
    """Random (theta, sample) pair, kept away from the pathological kink."""
    if model.kind == losses.PATHOLOGICAL_1D:
        theta = rng.standard_normal(1)
        while abs(theta[0]) < 0.05:
            theta = rng.standard_normal(1)
        return theta, Sample(np.array([float(rng.integers(0, 2))]), 0.0)
    theta = rng.standard_normal(model.d)
    x = rng.standard_normal(model.d)
    if model.kind == losses.RIDGE_LOGISTIC:
        return theta, Sample(x, 1.0 if rng.random() < 0.5 else -1.0)
    return theta, Sample(x, float(rng.standard_normal()))


def _central_diff_gradient(model, theta, s, h=1e-6):
    g = np.zeros_like(theta)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (
            avgmix.loss_value(model, theta + e, s)
            - avgmix.loss_value(model, theta - e, s)
        ) / (2 * h)
    return g


def _central_diff_hessian(model, theta, s, h=1e-6):
    H = np.zeros((theta.shape[0], theta.shape[0]))
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        H[:, j] = (
            avgmix.loss_gradient(model, theta + e, s)
            - avgmix.loss_gradient(model, theta - e, s)
        ) / (2 * h)
    return H


ALL_MODELS = [avgmix.least_squares(4), avgmix.ridge_logistic(4, 0.01), PATH]


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.kind)
def test_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(101)
    for _ in range(10):
        theta, s = _random_point(rng, model)
        got = avgmix.loss_gradient(model, theta, s)
        expected = _central_diff_gradient(model, theta, s)
        scale = max(np.linalg.norm(expected), 1.0)
        assert np.linalg.norm(got - expected) / scale < 1e-5


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.kind)
def test_hessian_matches_finite_differences(model):
    rng = np.random.default_rng(202)
    for _ in range(10):
        theta, s = _random_point(rng, model)
        got = avgmix.loss_hessian(model, theta, s)
        expected = _central_diff_hessian(model, theta, s)
        scale = max(np.linalg.norm(expected), 1.0)
        assert np.linalg.norm(got - expected) / scale < 1e-4
        np.testing.assert_allclose(got, got.T)


@pytest.mark.parametrize("model", ALL_MODELS, ids=lambda m: m.kind)
def test_convex_along_lines(model):
    rng = np.random.default_rng(303)
    for _ in range(100):
        t1, s = _random_point(rng, model)
        t2, _ = _random_point(rng, model)
        mid = avgmix.loss_value(model, 0.5 * (t1 + t2), s)
        avg = 0.5 * (
            avgmix.loss_value(model, t1, s) + avgmix.loss_value(model, t2, s)
        )
        assert mid <= avg + 1e-12


def test_logistic_hessian_dominates_ridge():
    lam = 0.05
    model = avgmix.ridge_logistic(5, lam)
    rng = np.random.default_rng(404)
    for _ in range(50):
        theta = rng.standard_normal(5)
        s = Sample(rng.standard_normal(5), 1.0)
        H = avgmix.loss_hessian(model, theta, s)
        v = rng.standard_normal(5)
        assert v @ H @ v >= lam * (v @ v) - 1e-12


class TestEmpiricalRisk:
    def test_single_sample_equals_loss_value(self):
        s = Sample([0.5, -1.0], 0.7)
        ds = Dataset(X=s.features[None, :], y=[s.target])
        theta = np.array([0.2, 0.3])
        assert avgmix.empirical_risk(LSQ2, theta, ds) == pytest.approx(
            avgmix.loss_value(LSQ2, theta, s), rel=1e-15
        )

    def test_duplication_invariance(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 2))
        y = rng.standard_normal(6)
        theta = rng.standard_normal(2)
        once = avgmix.empirical_risk(LSQ2, theta, Dataset(X=X, y=y))
        twice = avgmix.empirical_risk(
            LSQ2, theta, Dataset(X=np.vstack([X, X]), y=np.concatenate([y, y]))
        )
        assert once == pytest.approx(twice, rel=1e-14)

    def test_two_sample_least_squares(self):
        ds = Dataset(X=np.array([[1.0], [1.0]]), y=np.array([0.0, 2.0]))
        model = avgmix.least_squares(1)
        assert avgmix.empirical_risk(model, np.zeros(1), ds) == pytest.approx(1.0)

    def test_gradient_and_hessian_are_means(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((8, 3))
        y = np.where(rng.random(8) < 0.5, 1.0, -1.0)
        ds = Dataset(X=X, y=y)
        model = avgmix.ridge_logistic(3, 0.01)
        theta = rng.standard_normal(3)
        grads = [
            avgmix.loss_gradient(model, theta, ds.sample(i)) for i in range(8)
        ]
        np.testing.assert_allclose(
            avgmix.empirical_risk_gradient(model, theta, ds),
            np.mean(grads, axis=0),
            atol=1e-12,
        )
        hessians = [
            avgmix.loss_hessian(model, theta, ds.sample(i)) for i in range(8)
        ]
        np.testing.assert_allclose(
            avgmix.empirical_risk_hessian(model, theta, ds),
            np.mean(hessians, axis=0),
            atol=1e-12,
        )

    def test_gradient_vanishes_at_closed_form_solution(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((60, 5))
        y = rng.standard_normal(60)
        ds = Dataset(X=X, y=y)
        est = avgmix.solve_closed_form_ls(ds)
        g = avgmix.empirical_risk_gradient(avgmix.least_squares(5), est.theta, ds)
        assert np.linalg.norm(g) < 1e-8

    def test_empty_dataset_rejected(self):
        ds = Dataset(X=np.zeros((0, 2)), y=np.zeros(0))
        with pytest.raises(InvalidArgumentError):
            avgmix.empirical_risk(LSQ2, np.zeros(2), ds)


class TestContracts:
    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            avgmix.loss_value(LSQ2, np.zeros(3), Sample([1.0, 1.0], 0.0))
        with pytest.raises(DimensionMismatchError):
            avgmix.loss_value(LSQ2, np.zeros(2), Sample([1.0, 1.0, 1.0], 0.0))

    def test_pathological_feature_domain(self):
        with pytest.raises(InvalidSampleError):
            avgmix.loss_value(PATH, np.zeros(1), Sample([0.5], 0.0))

    def test_logistic_label_domain(self):
        with pytest.raises(InvalidSampleError):
            avgmix.loss_value(LOGIT0, np.zeros(3), Sample([1.0, 0.0, 0.0], 0.0))

    def test_model_validation(self):
        with pytest.raises(InvalidArgumentError):
            losses.LossModel("pathological_1d", 2)
        with pytest.raises(InvalidArgumentError):
            losses.LossModel("ridge_logistic", 2, -1.0)
        with pytest.raises(InvalidArgumentError):
            losses.LossModel("nonsense", 2)

    def test_nonfinite_theta_rejected(self):
        with pytest.raises(InvalidArgumentError):
            avgmix.loss_value(LSQ2, np.array([np.nan, 0.0]), Sample([1.0, 1.0], 0.0))
