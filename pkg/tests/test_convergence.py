from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadconv.convergence import (
    BetaFit,
    ClassifierConfig,
    RegimeLayout,
    beta_fit_break,
    beta_fit_smooth,
    break_design,
    classify_all,
    classify_regime,
    deterministic_part,
    estimate_change_dates,
    fitted_derivative,
    regime_median_derivative,
    smooth_design,
)
from quadconv.errors import EmptyRegime
from quadconv.regression import TrendSpec, time_grid

T = 120


def _fit(beta, delta, eta, t=10.0, kind="break", y_scale=1.0):
    n = len(delta)
    z = np.zeros(T)
    return BetaFit(beta, np.asarray(delta, float), np.asarray(eta, float), t,
                   np.full(n, t), np.full(n, t), z, z, kind, 0, y_scale)


class TestLayout:
    def test_bounds(self):
        lay = RegimeLayout.build(T, (40, 80))
        assert lay.bounds == (0, 40, 80, T) and lay.n_regimes == 3
        assert lay.regime_slice(2) == slice(40, 80)

    def test_short_regime_merged(self, caplog):
        lay = RegimeLayout.build(T, (40, 43))
        assert lay.change_indices == (40,) and lay.merged == (43,)
        assert "shorter" in caplog.text

    def test_short_last_regime(self):
        lay = RegimeLayout.build(T, (60, 117), "smooth", (5.0, 9.0))
        assert lay.change_indices == (60,) and lay.speeds == (5.0,)

    def test_invalid(self):
        with pytest.raises(ValueError):
            RegimeLayout(T, (80, 40))
        with pytest.raises(ValueError):
            RegimeLayout(T, (40,), "smooth", ())
        with pytest.raises(EmptyRegime):
            RegimeLayout.build(T, (60,)).regime_slice(3)


class TestBetaFit:
    lay = RegimeLayout.build(T, (50,))

    def test_zero_series(self):
        for fit in (beta_fit_break(np.zeros(T), self.lay),
                    beta_fit_smooth(np.zeros(T), RegimeLayout.build(T, (50,), "smooth", (10.0,)))):
            assert fit.beta == 0 and not fit.delta.any() and not fit.eta.any()
            assert fit.t_beta == 0 and not fit.t_delta.any() and not fit.t_eta.any()
        verdicts = classify_all(beta_fit_break(np.zeros(T), self.lay), self.lay)
        assert [v.label for v in verdicts] == ["E", "E"]

    @pytest.mark.parametrize("idx", [10, 50, 100])
    def test_exact_quadratic(self, idx):
        s = time_grid(T)
        fit = beta_fit_break(s * s, RegimeLayout.build(T, (idx,)))
        assert abs(fit.beta - 1) < 1e-10
        assert np.max(np.abs(fit.delta)) < 1e-10 and np.max(np.abs(fit.eta)) < 1e-10

    def test_break_regressors(self):
        X = break_design(self.lay)
        s = time_grid(T)
        np.testing.assert_allclose(X[:, 0], s * s)
        assert X[:50, 1].all() and not X[50:, 1].any() and X[50:, 2].all()

    def test_saturated_smooth_equals_break(self, rng):
        y = rng.normal(size=T).cumsum() * 0.1
        idx = (40, 85)
        # midpoints half-way between samples so every sample is saturated
        lam = tuple((i + 0.5) / T for i in idx)
        sm = beta_fit_smooth(y, _with_positions(RegimeLayout(T, idx, "smooth", (1e6, 1e6)), lam))
        br = beta_fit_break(y, RegimeLayout.build(T, idx))
        np.testing.assert_allclose(sm.fitted, br.fitted, atol=1e-4)
        np.testing.assert_allclose(sm.beta, br.beta, atol=1e-4)
        np.testing.assert_allclose(sm.eta, br.eta, atol=1e-4)
        # slope origins differ by half a sample: lambda_k versus T_k / T
        shift = np.r_[0.0, [(l - i / T) for l, i in zip(lam, idx)]]
        np.testing.assert_allclose(sm.delta, br.delta + sm.eta * shift, atol=1e-4)

    @given(st.floats(0.01, 1000), st.integers(0, 1000))
    def test_label_scale_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        s = time_grid(T)
        y = 1 - 2 * s + rng.normal(size=T) * 0.3
        a = [v.label for v in classify_all(beta_fit_break(y, self.lay), self.lay)]
        b = [v.label for v in classify_all(beta_fit_break(c * y, self.lay), self.lay)]
        assert a == b

    def test_design_full_rank(self):
        lay = RegimeLayout.build(T, (30, 90), "smooth", (4.0, 50.0))
        X = smooth_design(lay)
        assert np.linalg.matrix_rank(X) == X.shape[1] == 7


def _with_positions(layout, positions):
    """A smooth layout whose midpoints sit at ``positions`` rather than index/T."""

    class Shifted(RegimeLayout):
        @property
        def positions(self):
            return positions

    return Shifted(layout.T, layout.change_indices, layout.kind, layout.speeds)


class TestDerivative:
    def test_linear_single_regime(self):
        lay = RegimeLayout.build(T, ())
        assert regime_median_derivative(_fit(0.0, [0.3], [1.0]), lay, 1) == 1.0

    def test_quadratic_single_regime(self):
        lay = RegimeLayout.build(T, ())
        s = time_grid(T)
        assert regime_median_derivative(_fit(1.0, [0.0], [0.0]), lay, 1) == pytest.approx(2 * np.median(s))

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_beta_zero_gives_eta(self, e1, e2):
        lay = RegimeLayout.build(T, (60,))
        fit = _fit(0.0, [1.0, 2.0], [e1, e2])
        assert regime_median_derivative(fit, lay, 1) == e1
        assert regime_median_derivative(fit, lay, 2) == e2

    def test_smooth_finite_differences(self, rng):
        lay = RegimeLayout.build(T, (35, 80), "smooth", (7.0, 25.0))
        fit = _fit(0.4, rng.normal(size=3), rng.normal(size=3), kind="smooth")
        s = np.linspace(0.02, 0.98, 200)
        h = 1e-6
        fd = (deterministic_part(fit, lay, s + h) - deterministic_part(fit, lay, s - h)) / (2 * h)
        np.testing.assert_allclose(fitted_derivative(fit, lay, s), fd, rtol=1e-6, atol=1e-6)

    def test_break_finite_differences(self, rng):
        lay = RegimeLayout.build(T, (60,))
        fit = _fit(0.7, [1.0, -0.5], [0.3, -1.2])
        s = time_grid(T)
        d = fitted_derivative(fit, lay)
        for t in (10, 30, 70, 100):  # away from the break
            step = 2 * fit.beta * s[t] + fit.eta[0 if t < 60 else 1]
            assert d[t] == pytest.approx(step)


class TestClassify:
    lay = RegimeLayout.build(T, (60,))

    @pytest.mark.parametrize("delta,eta,t,label", [
        (1.0, -1.0, 10.0, "C"),
        (-1.0, 1.0, 10.0, "C"),
        (1.0, 1.0, 10.0, "D"),
    ])
    def test_rule(self, delta, eta, t, label):
        fit = _fit(0.0, [delta, delta], [eta, eta], t)
        assert classify_regime(fit, self.lay, 1).label == label

    def test_one_significant(self):
        fit = dataclasses.replace(_fit(0.0, [1.0, 1.0], [-1.0, 1.0]), t_eta=np.array([0.5, 0.5]))
        assert [v.label for v in classify_all(fit, self.lay)] == ["c", "d"]

    def test_small_and_insignificant(self):
        fit = _fit(0.0, [0.01, 1.0], [0.01, -1.0], t=0.1)
        assert classify_regime(fit, self.lay, 1).label == "E"
        assert classify_regime(fit, self.lay, 2).label == "c"

    def test_critical_value(self):
        assert ClassifierConfig(alpha=0.10).critical_t == pytest.approx(1.6449, abs=1e-4)


class TestChangeDates:
    def test_noiseless_level(self):
        t = np.arange(1, T + 1)
        y = 0.5 + 0.01 * t + 3.0 * (t > 60)
        lay, _ = estimate_change_dates(y, TrendSpec("I", "break", (0.5,)), stationary=True)
        assert lay.change_indices == (60,)

    @pytest.mark.slow
    def test_random_walk_differenced(self):
        rng = np.random.default_rng(3)
        spec = TrendSpec("I", "break", (0.5,))
        hits = 0
        for _ in range(200):
            y = np.cumsum(rng.normal(size=T)) + 10.0 * (np.arange(T) >= 60)
            lay, _ = estimate_change_dates(y, spec, stationary=False)
            hits += abs(lay.change_indices[0] - 60) <= 3
        assert hits / 200 >= 0.80
