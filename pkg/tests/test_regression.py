from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadconv.errors import RankDeficient
from quadconv.regression import (
    NlsConfig,
    TrendSpec,
    admissible_indices,
    build_design,
    fit_break_model,
    fit_smooth_model,
    fit_spec,
    fit_trend,
    information_criteria,
    ols_fit,
    sigmoid,
    smooth_mean,
    time_grid,
)


def exhaustive_break_ssr(y, model_class, n, trimming, min_separation=0.02, difference=False):
    """Brute-force oracle: refit OLS at every admissible date tuple (slow, T <= 60)."""
    T = len(y)
    idx = admissible_indices(T, trimming)
    sep = max(1, math.ceil(min_separation * T - 1e-9))
    best = (np.inf, None)
    for dates in itertools.combinations(idx, n):
        if any(b - a < sep for a, b in zip(dates, dates[1:])):
            continue
        spec = TrendSpec(model_class, "break", tuple(d / T for d in dates))
        try:
            X = build_design(spec, T)
        except RankDeficient:
            continue
        if difference:
            X, target = np.diff(X, axis=0)[:, 1:], np.diff(y)
        else:
            target = y
        if np.linalg.matrix_rank(X) < X.shape[1]:
            continue
        beta = np.linalg.solve(X.T @ X, X.T @ target)
        ssr = float(np.sum((target - X @ beta) ** 2))
        if ssr < best[0] - 1e-12:
            best = (ssr, dates)
    return best


class TestSigmoid:
    def test_values(self):
        assert sigmoid(0.3, 0.3, 50.0) == 0.5
        assert sigmoid(0.9, 0.3, 0.0) == 0.5
        assert abs(sigmoid(0.6, 0.5, 10.0) - 1 / (1 + math.exp(-1))) < 1e-15

    @given(st.floats(0, 1), st.floats(0.01, 0.99), st.floats(0, 500))
    def test_point_symmetry(self, s, lam, gam):
        assert sigmoid(s, lam, gam) + sigmoid(2 * lam - s, lam, gam) == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(0.01, 0.99), st.floats(0.1, 500))
    def test_monotone(self, lam, gam):
        v = sigmoid(np.linspace(0, 1, 50), lam, gam)
        assert np.all(np.diff(v) >= 0) and np.all((v >= 0) & (v <= 1))

    def test_no_overflow(self):
        assert sigmoid(1.0, 0.0, 1e6) == 1.0 and sigmoid(0.0, 1.0, 1e6) == 0.0


class TestDesign:
    def test_zero_model(self):
        X = build_design(TrendSpec(), 10)
        s = np.arange(1, 11) / 10
        np.testing.assert_array_equal(X, np.column_stack([np.ones(10), s, s * s]))

    def test_break_columns(self):
        X = build_design(TrendSpec("III", "break", (0.5,)), 12)
        np.testing.assert_array_equal(X[:, 3], [0] * 6 + [1] * 6)
        np.testing.assert_allclose(X[:, 4], np.r_[np.zeros(6), np.arange(1, 7) / 12])

    def test_saturated_smooth_matches_break_away_from_midpoint(self):
        T, lam, gam = 100, 0.5, 283.53
        sm = build_design(TrendSpec("III", "smooth", (lam,), (gam,)), T)[:, 3]
        br = build_design(TrendSpec("III", "break", (lam,)), T)[:, 3]
        far = np.abs(time_grid(T) - lam) > 10.0 / gam
        assert np.max(np.abs(sm - br)[far]) < 1e-4

    def test_too_short(self):
        with pytest.raises(RankDeficient):
            build_design(TrendSpec("III", "break", (0.5,)), 9)

    def test_duplicate_dates_rejected(self):
        with pytest.raises(ValueError):
            TrendSpec("I", "break", (0.5, 0.5))

    def test_colliding_dates_rank_deficient(self):
        # distinct positions that floor to the same sample index
        with pytest.raises(RankDeficient):
            build_design(TrendSpec("I", "break", (0.501, 0.502)), 40)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            TrendSpec("I", "smooth", (0.3,), ())
        with pytest.raises(ValueError):
            TrendSpec("0", "break", (0.3,))
        with pytest.raises(ValueError):
            TrendSpec("I", "break", (1.2,))
        assert TrendSpec("III", "smooth", (0.2, 0.5), (3.0, 4.0)).label == "III-2"


class TestOls:
    def test_exact_quadratic(self):
        s = time_grid(40)
        fit = ols_fit(build_design(TrendSpec(), 40), 1 + 2 * s - 3 * s * s)
        assert fit.ssr < 1e-25 and fit.adj_r2 == pytest.approx(1.0)
        np.testing.assert_allclose(fit.coefficients, [1, 2, -3], atol=1e-10)

    def test_linear_coefficients(self):
        s = time_grid(30)
        np.testing.assert_allclose(ols_fit(build_design(TrendSpec(), 30), s).coefficients, [0, 1, 0], atol=1e-12)

    def test_normal_equations_oracle(self, rng):
        X = rng.normal(size=(6, 2))
        y = rng.normal(size=6)
        # hand-rolled 2x2 inverse of X'X
        a, b, d = X[:, 0] @ X[:, 0], X[:, 0] @ X[:, 1], X[:, 1] @ X[:, 1]
        inv = np.array([[d, -b], [-b, a]]) / (a * d - b * b)
        np.testing.assert_allclose(ols_fit(X, y).coefficients, inv @ (X.T @ y), rtol=1e-10)

    def test_rank_deficient(self, rng):
        X = rng.normal(size=(10, 2))
        with pytest.raises(RankDeficient):
            ols_fit(np.column_stack([X, X[:, 0]]), rng.normal(size=10))

    @given(st.integers(0, 10_000))
    def test_residual_orthogonality(self, seed):
        rng = np.random.default_rng(seed)
        T = 50
        X = build_design(TrendSpec("III", "smooth", (0.3, 0.7), (5.0, 40.0)), T)
        fit = ols_fit(X, rng.normal(size=T))
        e = fit.residuals
        assert np.max(np.abs(X.T @ e)) / (np.linalg.norm(X) * np.linalg.norm(e) + 1e-300) <= 1e-8
        assert fit.ssr == pytest.approx(float(e @ e))

    def test_information_criteria(self):
        sic, aic = information_criteria(2.0, 100, 5)
        ll = 100 * math.log(0.02)
        assert sic == pytest.approx(ll + 5 * math.log(100)) and aic == pytest.approx(ll + 10)

    def test_parameter_count_includes_change_parameters(self, rng):
        y = rng.normal(size=60)
        smooth = fit_spec(y, TrendSpec("III", "smooth", (0.3, 0.6), (5.0, 9.0)))
        brk = fit_spec(y, TrendSpec("III", "break", (0.3, 0.6)))
        assert smooth.n_params == 11 and brk.n_params == 9
        assert smooth.sic - smooth.aic == pytest.approx(11 * (math.log(60) - 2))


class TestBreakFit:
    def test_noiseless_truth(self):
        T = 100
        spec = TrendSpec("III", "break", (0.5,))
        y = build_design(spec, T) @ np.array([1.0, 0.5, -0.3, 0.8, -1.2])
        est, fit = fit_break_model(y, "III", 1)
        assert est.break_indices(T) == (50,) and fit.ssr < 1e-20

    @pytest.mark.parametrize("model_class,n,difference", [
        ("I", 1, False), ("III", 1, False), ("I", 2, False), ("III", 2, False),
        ("I", 1, True), ("III", 2, True),
    ])
    def test_matches_exhaustive_oracle(self, model_class, n, difference):
        rng = np.random.default_rng(hash((model_class, n, difference)) % 2**32)
        T = 48
        y = np.cumsum(rng.normal(size=T)) if difference else rng.normal(size=T) + (np.arange(T) > 20)
        est, fit = fit_break_model(y, model_class, n, trimming=(0.1, 0.9), difference=difference)
        oracle_ssr, oracle_dates = exhaustive_break_ssr(y, model_class, n, (0.1, 0.9), difference=difference)
        assert fit.ssr == pytest.approx(oracle_ssr, rel=1e-9, abs=1e-12)
        assert est.break_indices(T) == tuple(oracle_dates)

    def test_min_separation(self, rng):
        T = 50
        est, _ = fit_break_model(rng.normal(size=T), "I", 2, min_separation=0.2)
        a, b = est.break_indices(T)
        assert b - a >= 10


class TestSmoothFit:
    def _signal(self, T=200):
        s = time_grid(T)
        return 1.0 + 0.5 * s - 0.6 * s * s + sigmoid(s, 0.4, 30.0)

    def test_noiseless_recovery(self):
        spec, fit = fit_smooth_model(self._signal(), "I", 1)
        assert abs(spec.positions[0] - 0.4) < 0.005
        assert abs(spec.speeds[0] - 30.0) / 30.0 < 0.05
        assert fit.converged

    def test_scaling(self):
        y = self._signal() + 0.05 * np.random.default_rng(1).normal(size=200)
        a, fa = fit_smooth_model(y, "I", 1)
        b, fb = fit_smooth_model(10 * y, "I", 1)
        assert a.positions[0] == pytest.approx(b.positions[0], abs=1e-6)
        assert a.speeds[0] == pytest.approx(b.speeds[0], rel=1e-4)
        np.testing.assert_allclose(fb.coefficients, 10 * fa.coefficients, rtol=1e-4, atol=1e-8)

    def test_not_worse_than_grid(self, rng):
        T = 80
        y = rng.normal(size=T) + 2 * (time_grid(T) > 0.6)
        cfg = NlsConfig(gamma_grid=np.geomspace(1, 300, 8))
        spec, fit = fit_smooth_model(y, "III", 1, cfg)
        grid_only = NlsConfig(gamma_grid=np.geomspace(1, 300, 8), max_iter=1)
        _, gfit = fit_smooth_model(y, "III", 1, grid_only)
        assert fit.ssr <= gfit.ssr + 1e-12

    def test_two_changes_ordered(self):
        T = 109
        s = time_grid(T)
        theta = np.array([0.2, 0.1, -0.2, 1.0, -1.5, 0.2, 0.45, 40.0, 60.0])
        y = smooth_mean(theta, "I", 2, T) + 0.02 * np.random.default_rng(4).normal(size=T)
        spec, _ = fit_smooth_model(y, "I", 2)
        assert spec.positions[0] < spec.positions[1]
        assert abs(spec.positions[0] - 0.2) < 0.02 and abs(spec.positions[1] - 0.45) < 0.02
        assert s.shape == (T,)

    def test_saturated_smooth_ssr_equals_break(self, rng):
        T = 60
        y = rng.normal(size=T)
        lam = (30 + 0.5) / T
        sm = fit_spec(y, TrendSpec("III", "smooth", (lam,), (1e6,)))
        br = fit_spec(y, TrendSpec("III", "break", (lam,)))
        assert sm.ssr == pytest.approx(br.ssr, rel=1e-6)

    def test_fit_trend_model_zero(self, rng):
        spec, fit = fit_trend(rng.normal(size=40), "0", 0, "smooth")
        assert spec.label == "0" and fit.n_params == 3
