import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq, minimize_scalar

from kexpectile.als import (
    ALSConfig,
    DiscreteDistribution,
    als_loss,
    clip,
    excess_inner_risk,
    expectile,
    inner_risk,
    lipschitz_constant,
    newey_residual,
)
from kexpectile.errors import DomainError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
taus = st.floats(0.01, 0.99)


def newey_oracle(values, masses, tau):
    """Independent expectile: Brent's method on the first-order condition."""
    v = np.asarray(values, float)
    m = np.asarray(masses, float)

    def g(t):
        return tau * np.sum(np.where(v >= t, v - t, 0.0) * m) - (1 - tau) * np.sum(np.where(v < t, t - v, 0.0) * m)

    if v.min() == v.max():
        return v[0]
    return brentq(g, v.min(), v.max(), xtol=1e-15, rtol=1e-15)


@st.composite
def distributions(draw, max_atoms=8):
    k = draw(st.integers(1, max_atoms))
    values = draw(st.lists(st.floats(-10, 10), min_size=k, max_size=k))
    weights = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    w = np.asarray(weights)
    return DiscreteDistribution(values, w / w.sum())


class TestConfig:
    def test_derived_constants(self):
        cfg = ALSConfig(0.3)
        assert cfg.c_tau == 0.3
        assert cfg.C_tau == 0.7

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.2, 1.5, float("nan")])
    def test_rejects_out_of_range(self, tau):
        with pytest.raises(DomainError):
            ALSConfig(tau)

    @given(taus)
    def test_constant_identities(self, tau):
        cfg = ALSConfig(tau)
        assert cfg.c_tau + cfg.C_tau == pytest.approx(1.0, abs=1e-15)
        assert cfg.c_tau <= 0.5 <= cfg.C_tau


class TestLoss:
    @pytest.mark.parametrize("tau,y,t,expected", [(0.3, 1, 1, 0.0), (0.9, 2, 0, 3.6), (0.3, 0, 2, 2.8)])
    def test_examples(self, tau, y, t, expected):
        assert als_loss(tau, y, t) == pytest.approx(expected, rel=1e-15)

    def test_non_finite_rejected(self):
        with pytest.raises(DomainError):
            als_loss(0.5, float("inf"), 0.0)
        with pytest.raises(DomainError):
            als_loss(0.5, 0.0, float("nan"))

    @given(taus, finite, finite)
    def test_reflection_symmetry(self, tau, y, t):
        assert als_loss(tau, y, t) == pytest.approx(als_loss(1 - tau, -y, -t), rel=1e-12, abs=1e-300)

    @given(finite, finite)
    def test_half_is_half_squared_error(self, y, t):
        # exact away from subnormal squares
        assume((y - t) ** 2 == 0 or (y - t) ** 2 > 1e-300)
        assert 2 * als_loss(0.5, y, t) == (y - t) ** 2

    @given(taus, finite, finite)
    def test_nonnegative_zero_iff_equal(self, tau, y, t):
        val = als_loss(tau, y, t)
        assert val >= 0
        assert (val == 0) == (y == t) or abs(y - t) < 1e-150

    @given(taus, st.floats(0.1, 10), st.floats(-1, 1), finite)
    def test_clipping_never_increases_loss(self, tau, M, y_frac, t):
        y = y_frac * M
        assert als_loss(tau, y, clip(t, M)) <= als_loss(tau, y, t)

    @settings(max_examples=300)
    @given(taus, st.floats(0.1, 10), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
    def test_local_lipschitz(self, tau, M, a, b, c):
        y, t, s = a * M, b * M, c * M
        lhs = abs(als_loss(tau, y, t) - als_loss(tau, y, s))
        assert lhs <= lipschitz_constant(tau, M) * abs(t - s) * (1 + 1e-12) + 1e-300


class TestClipAndLipschitz:
    @pytest.mark.parametrize("t,M,expected", [(1.5, 1, 1.0), (-3, 2, -2.0), (0.4, 1, 0.4)])
    def test_clip(self, t, M, expected):
        assert clip(t, M) == expected

    def test_clip_vectorised(self):
        np.testing.assert_array_equal(clip(np.array([-5.0, 0.5, 5.0]), 1.0), [-1.0, 0.5, 1.0])

    @pytest.mark.parametrize("M", [0.0, -1.0])
    def test_clip_level_positive(self, M):
        with pytest.raises(DomainError):
            clip(0.0, M)

    @pytest.mark.parametrize("tau,M,expected", [(0.5, 1, 2.0), (0.9, 2, 7.2), (0.1, 1, 3.6)])
    def test_lipschitz(self, tau, M, expected):
        assert lipschitz_constant(tau, M) == pytest.approx(expected, rel=1e-15)


class TestDistribution:
    def test_renormalises_small_drift(self):
        Q = DiscreteDistribution([0.0, 1.0], [0.5, 0.5 + 5e-10])
        assert abs(Q.masses.sum() - 1.0) <= 1e-12

    def test_rejects_bad_total(self):
        with pytest.raises(DomainError):
            DiscreteDistribution([0.0, 1.0], [0.5, 0.6])

    @pytest.mark.parametrize("masses", [[1.0, 0.0], [1.5, -0.5]])
    def test_rejects_nonpositive_masses(self, masses):
        with pytest.raises(DomainError):
            DiscreteDistribution([0.0, 1.0], masses)

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(DomainError):
            DiscreteDistribution([], [])
        with pytest.raises(DomainError):
            DiscreteDistribution([np.inf], [1.0])

    def test_merges_duplicates(self):
        Q = DiscreteDistribution([1.0, 0.0, 1.0], [0.25, 0.5, 0.25])
        assert Q.atoms == [(0.0, 0.5), (1.0, 0.5)]

    def test_immutable(self):
        Q = DiscreteDistribution.point_mass(2.0)
        with pytest.raises(AttributeError):
            Q.values = np.array([3.0])
        with pytest.raises(ValueError):
            Q.values[0] = 3.0

    def test_csv_round_trip(self, tmp_path):
        Q = DiscreteDistribution([0.1, -2.0, 3.3], [0.2, 0.3, 0.5])
        path = tmp_path / "q.csv"
        Q.to_csv(path)
        assert path.read_text().splitlines()[0] == "value,mass"
        assert DiscreteDistribution.from_csv(path).atoms == Q.atoms


class TestExpectile:
    def test_two_point(self):
        Q = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
        oracle = newey_oracle([0, 1], [0.5, 0.5], 0.7)
        assert oracle == pytest.approx(0.7, abs=1e-14)
        assert expectile(Q, 0.7) == pytest.approx(0.7, abs=1e-12)

    def test_point_mass(self):
        for tau in (0.1, 0.5, 0.93):
            assert expectile(DiscreteDistribution.point_mass(-2.5), tau) == -2.5

    def test_half_is_mean(self):
        Q = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
        assert expectile(Q, 0.5) == pytest.approx(0.5, abs=1e-14)

    def test_root_at_atom(self):
        # tau = 1/2 on a symmetric three-point law puts the root exactly on the middle atom
        Q = DiscreteDistribution([-1.0, 0.0, 1.0], [0.25, 0.5, 0.25])
        assert expectile(Q, 0.5) == 0.0

    @settings(max_examples=200)
    @given(distributions(), taus)
    def test_matches_brent_oracle_and_residual(self, Q, tau):
        t = expectile(Q, tau)
        assert t == pytest.approx(newey_oracle(Q.values, Q.masses, tau), abs=1e-10 * (1 + Q.span))
        assert abs(newey_residual(Q, tau, t)) <= 1e-12 * (1 + Q.span)

    @settings(max_examples=200)
    @given(distributions(), taus, taus)
    def test_monotone_in_tau_and_in_range(self, Q, t1, t2):
        lo, hi = sorted((t1, t2))
        a, b = expectile(Q, lo), expectile(Q, hi)
        assert a <= b + 1e-12 * (1 + Q.span)
        assert Q.values[0] <= a <= Q.values[-1]

    @settings(max_examples=100)
    @given(distributions(), taus)
    def test_minimises_inner_risk(self, Q, tau):
        if len(Q) == 1:
            return
        res = minimize_scalar(lambda t: inner_risk(Q, tau, t), bounds=(Q.values[0], Q.values[-1]),
                              method="bounded", options={"xatol": 1e-10})
        t_star = expectile(Q, tau)
        assert inner_risk(Q, tau, t_star) <= res.fun + 1e-12


class TestInnerRisk:
    Q = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])

    def test_examples(self):
        assert inner_risk(self.Q, 0.5, 1.0) == pytest.approx(0.5 * 0.5 * 1 + 0.5 * 0, rel=1e-15)
        assert inner_risk(self.Q, 0.5, 0.5) == pytest.approx(0.125, rel=1e-15)
        assert inner_risk(DiscreteDistribution.point_mass(3.0), 0.2, 3.0) == 0.0

    def test_vectorised(self):
        ts = np.array([0.5, 1.0])
        np.testing.assert_allclose(inner_risk(self.Q, 0.5, ts), [0.125, 0.25], rtol=1e-15)

    @given(distributions(), taus, finite, finite)
    def test_convex_midpoint(self, Q, tau, a, b):
        mid = inner_risk(Q, tau, 0.5 * (a + b))
        avg = 0.5 * (inner_risk(Q, tau, a) + inner_risk(Q, tau, b))
        assert mid <= avg + 1e-12 * (1 + abs(avg))


class TestExcessInnerRisk:
    def test_equality_case(self):
        Q = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
        ex = excess_inner_risk(Q, 0.5, 1.0)
        assert ex == pytest.approx(0.125, abs=1e-15)
        assert 0.5 * 0.5**2 == pytest.approx(ex, abs=1e-15)

    def test_zero_at_minimiser(self):
        Q = DiscreteDistribution([0.0, 2.0, 5.0], [0.2, 0.3, 0.5])
        assert excess_inner_risk(Q, 0.8, expectile(Q, 0.8)) == 0.0

    def test_grid_sandwich_five_atoms(self):
        rng = np.random.default_rng(5)
        Q = DiscreteDistribution(rng.normal(size=5), rng.dirichlet(np.ones(5)))
        cfg = ALSConfig(0.8)
        t_star = newey_oracle(Q.values, Q.masses, 0.8)
        ts = np.linspace(Q.values[0] - 1, Q.values[-1] + 1, 101)
        # brute-force: inner risk by explicit double loop
        brute = np.array([sum(m * (0.8 if v >= t else 0.2) * (v - t) ** 2 for v, m in Q.atoms) for t in ts])
        brute_star = sum(m * (0.8 if v >= t_star else 0.2) * (v - t_star) ** 2 for v, m in Q.atoms)
        ex = excess_inner_risk(Q, cfg, ts)
        np.testing.assert_allclose(ex, brute - brute_star, atol=1e-12)
        sq = (ts - t_star) ** 2
        assert np.all(cfg.c_tau * sq <= ex + 1e-12)
        assert np.all(ex <= cfg.C_tau * sq + 1e-12)

    @settings(max_examples=300)
    @given(distributions(), taus, st.floats(-12, 12))
    def test_sandwich_property(self, Q, tau, t):
        cfg = ALSConfig(tau)
        t_star = expectile(Q, cfg)
        ex = excess_inner_risk(Q, cfg, t, t_star)
        sq = (t - t_star) ** 2
        scale = 1e-12 * (1 + Q.span**2 + t * t)
        assert cfg.c_tau * sq <= ex + scale
        assert ex <= cfg.C_tau * sq + scale
