"""Change dates, regime-wise beta-convergence regressions and C/c/D/d/E labels.

Within regime ``k`` (samples ``T_{k-1} < t <= T_k``) the deterministic part is
``beta s^2 + delta_k + eta_k (s - s_{k-1})`` for breaks.  Smooth transitions
replace the regime indicators by differences of logistic weights, so the
same coefficients blend across neighbouring regimes.  No separate constant
is included: the regime indicators sum to one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Literal

import numpy as np

from .errors import EmptyRegime, RankDeficient
from .lrv import auto_bandwidth
from .regression import ChangeKind, NlsConfig, TrendSpec, fit_trend, sigmoid, time_grid
from .series import as_array, break_index

log = logging.getLogger(__name__)

MIN_REGIME = 5
HAC_BANDWIDTH = "andrews"

Label = Literal["C", "c", "D", "d", "E"]


@dataclass(frozen=True)
class RegimeLayout:
    """Change indices (observations before each change) and, for smooth changes, speeds."""

    T: int
    change_indices: tuple[int, ...]
    kind: ChangeKind = "break"
    speeds: tuple[float, ...] = ()
    merged: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.change_indices)
        object.__setattr__(self, "change_indices", idx)
        object.__setattr__(self, "speeds", tuple(float(g) for g in self.speeds))
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("change indices must be strictly increasing")
        if idx and not (0 < idx[0] and idx[-1] < self.T):
            raise ValueError("change indices must lie strictly inside the sample")
        if self.kind == "smooth" and len(self.speeds) != len(idx):
            raise ValueError("smooth layouts need one speed per change")

    @classmethod
    def build(cls, T: int, change_indices, kind: ChangeKind = "break", speeds=()) -> "RegimeLayout":
        """Create a layout, merging any regime shorter than ``MIN_REGIME`` into its neighbour."""
        idx = [int(i) for i in change_indices]
        gam = [float(g) for g in speeds] if kind == "smooth" else []
        merged = []
        while True:
            bounds = [0, *idx, T]
            short = [k for k in range(len(bounds) - 1) if bounds[k + 1] - bounds[k] < MIN_REGIME]
            if not short or not idx:
                break
            k = short[0]
            drop = min(k, len(idx) - 1)  # the change closing regime k, or opening it for the last regime
            merged.append(idx[drop])
            log.warning("regime %d shorter than %d observations; dropping change at index %d",
                        k + 1, MIN_REGIME, idx[drop])
            del idx[drop]
            if gam:
                del gam[drop]
        return cls(T, tuple(idx), kind, tuple(gam), tuple(merged))

    @property
    def n_regimes(self) -> int:
        return len(self.change_indices) + 1

    @property
    def bounds(self) -> tuple[int, ...]:
        return (0, *self.change_indices, self.T)

    @property
    def positions(self) -> tuple[float, ...]:
        return tuple(i / self.T for i in self.change_indices)

    def regime_slice(self, k: int) -> slice:
        """Zero-based slice of regime ``k`` (1-based)."""
        if not 1 <= k <= self.n_regimes:
            raise EmptyRegime(f"regime {k} outside 1..{self.n_regimes}")
        b = self.bounds
        if b[k] <= b[k - 1]:
            raise EmptyRegime(f"regime {k} is empty")
        return slice(b[k - 1], b[k])


def layout_from_spec(spec: TrendSpec, T: int) -> RegimeLayout:
    idx = [break_index(p, T) for p in spec.positions]
    return RegimeLayout.build(T, idx, spec.kind, spec.speeds)


def estimate_change_dates(
    y, spec: TrendSpec, stationary: bool, kind: ChangeKind | None = None, nls: NlsConfig | None = None
) -> tuple[RegimeLayout, TrendSpec]:
    """Change dates from a levels fit (stationary noise) or a first-differenced fit (unit root)."""
    y = as_array(y)
    if spec.n_changes < 1:
        raise ValueError("estimate_change_dates needs at least one change")
    kind = kind or spec.kind
    est, _ = fit_trend(y, spec.model_class, spec.n_changes, kind, nls, difference=not stationary)
    return layout_from_spec(est, y.shape[0]), est


# ---------------------------------------------------------------------------
# regressions


@dataclass(frozen=True)
class BetaFit:
    beta: float
    delta: np.ndarray
    eta: np.ndarray
    t_beta: float
    t_delta: np.ndarray
    t_eta: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    kind: ChangeKind
    bandwidth: int = 0
    y_scale: float = 0.0

    @property
    def n_regimes(self) -> int:
        return self.delta.shape[0]


def break_design(layout: RegimeLayout) -> np.ndarray:
    T = layout.T
    t = np.arange(1, T + 1)
    b = layout.bounds
    cols = [(t / T) ** 2]
    du = [((t > b[k - 1]) & (t <= b[k])).astype(float) for k in range(1, len(b))]
    dt = [d * (t - b[k - 1]) / T for k, d in enumerate(du, start=1)]
    return np.column_stack(cols + du + dt)


def _regime_weights(layout: RegimeLayout, s: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Smooth regime weights and their derivatives with respect to s."""
    sig = [sigmoid(s, lam, gam) for lam, gam in zip(layout.positions, layout.speeds)]
    dsig = [gam * g * (1.0 - g) for g, gam in zip(sig, layout.speeds)]
    one, zero = np.ones_like(s), np.zeros_like(s)
    upper = [one] + sig
    lower = sig + [zero]
    d_upper = [zero] + dsig
    d_lower = dsig + [zero]
    w = [u - l for u, l in zip(upper, lower)]
    dw = [du - dl for du, dl in zip(d_upper, d_lower)]
    return w, dw


def smooth_design(layout: RegimeLayout) -> np.ndarray:
    s = time_grid(layout.T)
    w, _ = _regime_weights(layout, s)
    origin = (0.0, *layout.positions)
    return np.column_stack([s * s] + w + [(s - o) * wk for o, wk in zip(origin, w)])


def hac_covariance(X: np.ndarray, u: np.ndarray, bandwidth: int) -> np.ndarray:
    """Bartlett-kernel sandwich covariance of OLS coefficients."""
    g = X * u[:, None]
    S = g.T @ g
    for j in range(1, bandwidth + 1):
        G = g[j:].T @ g[:-j]
        S += (1.0 - j / (bandwidth + 1.0)) * (G + G.T)
    XtX_inv = np.linalg.inv(X.T @ X)
    return XtX_inv @ S @ XtX_inv


def _beta_fit(y: np.ndarray, X: np.ndarray, layout: RegimeLayout) -> BetaFit:
    if y.shape[0] != layout.T:
        raise ValueError("series length does not match the layout")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficient(f"beta regression design has rank {rank} < {X.shape[1]}")
    fitted = X @ coef
    u = y - fitted
    bw = int(auto_bandwidth(u, 1.0, HAC_BANDWIDTH)) if np.any(u) else 0
    se = np.sqrt(np.maximum(np.diag(hac_covariance(X, u, bw)), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, coef / se, 0.0)
    # coefficients exactly zero with no residual variation carry no evidence
    tstat = np.where(np.abs(coef) > 0, tstat, 0.0)
    m = layout.n_regimes
    return BetaFit(
        beta=float(coef[0]),
        delta=coef[1 : 1 + m],
        eta=coef[1 + m :],
        t_beta=float(tstat[0]),
        t_delta=tstat[1 : 1 + m],
        t_eta=tstat[1 + m :],
        residuals=u,
        fitted=fitted,
        kind=layout.kind,
        bandwidth=bw,
        y_scale=float(np.std(y)),
    )


def beta_fit_break(y, layout: RegimeLayout) -> BetaFit:
    """OLS of y on s^2 and regime-wise intercepts and slopes, with HAC t-statistics."""
    return _beta_fit(as_array(y), break_design(layout), layout)


def beta_fit_smooth(y, layout: RegimeLayout) -> BetaFit:
    """As ``beta_fit_break`` with logistic regime weights at the frozen midpoints and speeds."""
    if layout.kind != "smooth":
        raise ValueError("beta_fit_smooth needs a smooth layout")
    return _beta_fit(as_array(y), smooth_design(layout), layout)


def deterministic_part(fit: BetaFit, layout: RegimeLayout, s: np.ndarray) -> np.ndarray:
    """Fitted deterministic function at arbitrary points s = t/T (smooth kind)."""
    w, _ = _regime_weights(layout, s)
    origin = (0.0, *layout.positions)
    out = fit.beta * s * s
    for d, e, o, wk in zip(fit.delta, fit.eta, origin, w):
        out = out + (d + e * (s - o)) * wk
    return out


def fitted_derivative(fit: BetaFit, layout: RegimeLayout, s: np.ndarray | None = None) -> np.ndarray:
    """d/ds of the fitted deterministic function, right derivative at breaks."""
    T = layout.T
    if s is None:
        s = time_grid(T)
    if fit.kind == "break":
        t = np.rint(s * T)
        regime = np.searchsorted(np.asarray(layout.bounds[1:-1]), t, side="left")
        return 2.0 * fit.beta * s + fit.eta[regime]
    w, dw = _regime_weights(layout, s)
    origin = (0.0, *layout.positions)
    out = 2.0 * fit.beta * s
    for d, e, o, wk, dwk in zip(fit.delta, fit.eta, origin, w, dw):
        out = out + e * wk + (d + e * (s - o)) * dwk
    return out


def regime_median_derivative(fit: BetaFit, layout: RegimeLayout, k: int) -> float:
    sl = layout.regime_slice(k)
    return float(np.median(fitted_derivative(fit, layout)[sl]))


def regime_mean_derivative(fit: BetaFit, layout: RegimeLayout, k: int) -> float:
    sl = layout.regime_slice(k)
    return float(np.mean(fitted_derivative(fit, layout)[sl]))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassifierConfig:
    alpha: float = 0.10
    small: float = 0.05  # magnitude floor for E, as a multiple of sd(y)

    @property
    def critical_t(self) -> float:
        return NormalDist().inv_cdf(1.0 - self.alpha / 2.0)


@dataclass(frozen=True)
class ConvergenceVerdict:
    regime: int
    label: Label
    start_sign: int
    start_value: float
    median_derivative: float
    mean_derivative: float
    level_significant: bool
    slope_significant: bool
    extra: dict = field(default_factory=dict)


def _sign(x: float) -> int:
    return int(np.sign(x))


def classify_regime(
    fit: BetaFit, layout: RegimeLayout, k: int, cfg: ClassifierConfig = ClassifierConfig()
) -> ConvergenceVerdict:
    """Compare the sign of the regime's starting level with the sign of its median derivative.

    Opposite signs are convergence (C when both regime coefficients are
    significant, c when one is), equal signs divergence (D/d).  E marks a
    regime whose coefficients are insignificant and small relative to the
    series' spread.
    """
    sl = layout.regime_slice(k)
    if fit.kind == "break":
        start = float(fit.delta[k - 1])
    else:
        start = float(deterministic_part(fit, layout, time_grid(layout.T)[sl.start : sl.start + 1])[0])
    med = regime_median_derivative(fit, layout, k)
    mean = regime_mean_derivative(fit, layout, k)
    crit = cfg.critical_t
    d, e = float(fit.delta[k - 1]), float(fit.eta[k - 1])
    sig_d = abs(float(fit.t_delta[k - 1])) > crit
    sig_e = abs(float(fit.t_eta[k - 1])) > crit
    floor = cfg.small * fit.y_scale

    if not sig_d and not sig_e and abs(d) <= floor and abs(e) <= floor:
        label: Label = "E"
    else:
        converging = _sign(start) * _sign(med) < 0
        both = sig_d and sig_e
        label = ("C" if both else "c") if converging else ("D" if both else "d")
    return ConvergenceVerdict(
        regime=k,
        label=label,
        start_sign=_sign(start),
        start_value=start,
        median_derivative=med,
        mean_derivative=mean,
        level_significant=sig_d,
        slope_significant=sig_e,
        extra={"mean_median_agree": _sign(mean) == _sign(med)},
    )


def classify_all(fit: BetaFit, layout: RegimeLayout, cfg: ClassifierConfig = ClassifierConfig()) -> list[ConvergenceVerdict]:
    return [classify_regime(fit, layout, k, cfg) for k in range(1, layout.n_regimes + 1)]
