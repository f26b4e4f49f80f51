import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kexpectile.als import als_loss, clip
from kexpectile.errors import DomainError
from kexpectile.kernel import GaussianKernel, gram
from kexpectile.solver import (
    Dataset,
    ExpectileModel,
    empirical_risk,
    fit,
    objective,
    objective_gradient,
    predict,
    predict_clipped,
)


def random_data(seed, n=60, d=1, noise=0.3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, d))
    y = np.sin(2 * np.pi * x.mean(axis=1)) + noise * rng.standard_normal(n)
    return Dataset(x, y)


def numerical_gradient(G, y, c, lam, tau, h=1e-6):
    g = np.empty_like(c)
    for i in range(c.size):
        e = np.zeros_like(c)
        e[i] = h
        g[i] = (objective(G, y, c + e, lam, tau) - objective(G, y, c - e, lam, tau)) / (2 * h)
    return g


def assert_optimal(model, data, perturbations=10_000, seed=0):
    G = gram(model.kernel, data.x).entries
    c = np.asarray(model.coefficients)
    diag = model.diagnostics
    assert diag.gradient_norm <= 1e-8 * (1 + np.max(np.abs(data.y)))
    hist = np.asarray(diag.objective_history)
    assert np.all(np.diff(hist) <= 0)

    def J_rows(C):
        GC = C @ G
        return model.lam * np.einsum("ij,ij->i", C, GC) + als_loss(model.tau, data.y, GC).mean(axis=1)

    J = float(J_rows(c[None, :])[0])
    assert J <= hist[0]
    rng = np.random.default_rng(seed)
    delta = rng.standard_normal((perturbations, c.size))
    delta *= (rng.uniform(size=(perturbations, 1)) * 1e-2) / np.linalg.norm(delta, axis=1, keepdims=True)
    # convexity: J can drop below J(c*) by at most |grad| |delta|, plus rounding in J
    grad = np.linalg.norm(objective_gradient(G, data.y, c, model.lam, model.tau))
    allowed = grad * np.linalg.norm(delta, axis=1) + 4 * np.finfo(float).eps * (1 + abs(J))
    assert np.all(J - J_rows(c + delta) <= allowed)


class TestDataset:
    def test_shapes(self):
        data = Dataset([0.1, 0.2, 0.3], [1, 2, 3])
        assert data.n == 3 and data.d == 1

    @pytest.mark.parametrize("x,y", [
        ([[0.0], [1.0]], [1.0]),
        ([], []),
        ([[np.nan]], [1.0]),
        ([[0.0]], [np.inf]),
    ])
    def test_invalid(self, x, y):
        with pytest.raises(DomainError):
            Dataset(np.asarray(x, float), y)

    def test_declared_bound(self):
        with pytest.raises(DomainError):
            Dataset([[0.0]], [2.0], declared_bound=1.0)
        assert Dataset([[0.0]], [1.0], declared_bound=1.0).declared_bound == 1.0

    def test_csv_round_trip(self, tmp_path):
        data = random_data(3, n=7, d=2)
        path = tmp_path / "d.csv"
        data.to_csv(path)
        assert path.read_text().splitlines()[0] == "x1,x2,y"
        back = Dataset.from_csv(path)
        np.testing.assert_array_equal(back.x, data.x)
        np.testing.assert_array_equal(back.y, data.y)


class TestFitExamples:
    def test_single_point(self):
        model = fit(Dataset([[0.3]], [1.0]), 0.9, 0.5, 1.0)
        assert model.coefficients[0] == pytest.approx(0.9 / 1.4, rel=1e-14)

    def test_zero_response(self):
        model = fit(Dataset(np.linspace(0, 1, 5), np.zeros(5)), 0.7, 1e-2, 0.5)
        np.testing.assert_array_equal(model.coefficients, 0.0)
        assert model.diagnostics.objective == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_half_is_kernel_ridge(self, seed):
        data = random_data(seed, n=80, d=2)
        lam, gamma = 1e-3, 0.5
        G = gram(GaussianKernel(gamma), data.x).entries
        direct = np.linalg.solve(G + 2 * data.n * lam * np.eye(data.n), data.y)
        model = fit(data, 0.5, lam, gamma)
        np.testing.assert_allclose(model.coefficients, direct, rtol=1e-8, atol=1e-8 * np.abs(direct).max())

    def test_rejects_bad_lambda(self):
        with pytest.raises(DomainError):
            fit(random_data(0), 0.5, 0.0, 0.5)

    def test_clip_level_default(self):
        data = random_data(1)
        assert fit(data, 0.5, 1e-2, 0.5).clip_level == np.max(np.abs(data.y))


class TestOptimality:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        data = random_data(11, n=25)
        G = gram(GaussianKernel(0.4), data.x).entries
        for _ in range(20):
            c = rng.standard_normal(data.n)
            an = objective_gradient(G, data.y, c, 1e-2, 0.8)
            fd = numerical_gradient(G, data.y, c, 1e-2, 0.8)
            assert np.linalg.norm(an - fd) <= 1e-5 * np.linalg.norm(fd)

    @pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
    @pytest.mark.parametrize("d", [1, 3])
    def test_fitted_models_are_optimal(self, tau, d):
        data = random_data(int(tau * 10) + d, n=100, d=d)
        model = fit(data, tau, 1e-3, 0.5)
        assert_optimal(model, data, perturbations=2_000)

    def test_irls_fixed_point(self):
        data = random_data(4, n=90)
        tau, lam = 0.85, 1e-3
        model = fit(data, tau, lam, 0.3)
        G = gram(model.kernel, data.x).entries
        c = np.asarray(model.coefficients)
        w = np.where(data.y - G @ c >= 0, tau, 1 - tau)
        rhs = (G + np.diag(data.n * lam / w)) @ c
        np.testing.assert_allclose(rhs, data.y, atol=1e-9 * (1 + np.abs(data.y).max()))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 0.95), st.sampled_from([1e-4, 1e-3, 1e-2, 1e-1]),
           st.floats(0.1, 1.0))
    def test_property_optimal(self, seed, tau, lam, gamma):
        data = random_data(seed, n=40)
        model = fit(data, tau, lam, gamma)
        assert_optimal(model, data, perturbations=500, seed=seed)


class TestPredict:
    def test_zero_coefficients(self):
        m = ExpectileModel(np.array([[0.0], [1.0]]), np.zeros(2), 0.5, 1e-2, 0.5)
        np.testing.assert_array_equal(predict(m, np.linspace(0, 1, 7)), 0.0)

    def test_single_support_point(self):
        m = ExpectileModel(np.array([[0.25]]), np.array([1.0]), 1.0, 1e-2, 0.5)
        assert predict(m, 0.25) == 1.0
        assert predict(m, 1.25) == pytest.approx(math.exp(-1), rel=1e-15)

    def test_multivariate_single_point(self):
        m = ExpectileModel(np.array([[0.0, 0.0]]), np.array([2.0]), 1.0, 1e-2, 0.5)
        assert predict(m, [0.0, 1.0]) == pytest.approx(2 * math.exp(-1), rel=1e-15)

    def test_dimension_mismatch(self):
        m = ExpectileModel(np.array([[0.0, 0.0]]), np.array([2.0]), 1.0, 1e-2, 0.5)
        with pytest.raises(DomainError):
            predict(m, np.zeros((3, 3)))

    @pytest.mark.parametrize("coef,M,expected", [(1.5, 1.0, 1.0), (-0.2, 1.0, -0.2), (-9.0, 2.0, -2.0)])
    def test_clipped(self, coef, M, expected):
        m = ExpectileModel(np.array([[0.0]]), np.array([coef]), 1.0, 1e-2, 0.5, clip_level=M)
        assert predict_clipped(m, 0.0) == expected

    def test_clipped_needs_level(self):
        m = ExpectileModel(np.array([[0.0]]), np.array([1.0]), 1.0, 1e-2, 0.5)
        with pytest.raises(DomainError):
            predict_clipped(m, 0.0)

    def test_chunking_consistent(self):
        data = random_data(2, n=30)
        model = fit(data, 0.5, 1e-2, 0.5)
        X = np.random.default_rng(0).uniform(size=(20_000, 1))
        direct = GaussianKernel(0.5).cross(X, data.x) @ model.coefficients
        np.testing.assert_allclose(model.predict(X), direct, rtol=1e-13, atol=1e-15)


class TestEmpiricalRisk:
    def test_examples(self):
        assert empirical_risk(lambda x: np.zeros(len(x)), Dataset([[0.0]], [1.0]), 0.9) == pytest.approx(0.9)
        two = Dataset([[0.0], [1.0]], [1.0, -1.0])
        assert empirical_risk(np.zeros(2), two, 0.5) == pytest.approx(0.5)
        assert empirical_risk(lambda x: np.array([1.0, -1.0]), two, 0.3) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.floats(0.05, 0.95))
    def test_clipping_never_increases_risk(self, seed, tau):
        data = random_data(seed, n=30)
        model = fit(data, tau, 1e-4, 0.2)
        raw = empirical_risk(model.predict(data.x), data, tau)
        clipped = empirical_risk(model, data, tau)
        assert clipped <= raw + 1e-15
        M = model.clip_level
        assert np.all(als_loss(tau, data.y, clip(model.predict(data.x), M))
                      <= als_loss(tau, data.y, model.predict(data.x)))


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        data = random_data(8, n=40, d=2)
        model = fit(data, 0.3, 1e-3, 0.6)
        path = tmp_path / "m.json"
        model.save(path)
        back = ExpectileModel.load(path)
        assert back.lam == model.lam and back.tau == model.tau and back.gamma == model.gamma
        assert back.clip_level == model.clip_level
        X = np.random.default_rng(0).uniform(size=(500, 2))
        assert np.array_equal(back.predict(X), model.predict(X))
        assert back.diagnostics == model.diagnostics

    def test_json_keys(self, tmp_path):
        import json
        model = fit(random_data(1, n=5), 0.5, 1e-2, 0.5)
        path = tmp_path / "m.json"
        model.save(path)
        assert set(json.loads(path.read_text())) == {
            "tau", "lambda", "gamma", "clip_level", "support_points", "coefficients", "diagnostics"}
