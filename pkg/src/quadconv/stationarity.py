"""KPSS-type stationarity test around a quadratic trend with breaks or smooth transitions.

Critical values are simulated conditionally on the fitted trend: the change
dates and transition speeds are frozen at their estimates and only the
linear coefficients are re-estimated in each replication.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import montecarlo as mc
from .errors import RankDeficient
from .lrv import auto_bandwidth, bartlett_lrv
from .regression import (
    ChangeKind,
    FitResult,
    NlsConfig,
    TrendSpec,
    build_design,
    fit_trend,
)
from .series import as_array
from .trend_tests import SimConfig

BANDWIDTH_RULE = "kurozumi"


def lm_statistic(residuals, k: float = 0.9, sigma2: float | None = None) -> float:
    """sigma^-2 T^-2 sum_t E_t^2 with E_t the partial sums of the residuals.

    ``sigma2`` overrides the long-run variance estimate.  Identically zero
    residuals give 0.
    """
    e = as_array(residuals)
    T = e.shape[0]
    if not np.any(e):
        return 0.0
    if sigma2 is None:
        sigma2 = float(bartlett_lrv(e, auto_bandwidth(e, k, BANDWIDTH_RULE)))
    E = np.cumsum(e)
    return float(E @ E) / (sigma2 * T * T)


def lm_statistics(E: np.ndarray, k: float) -> np.ndarray:
    """Vectorised ``lm_statistic`` over the rows of a residual matrix."""
    T = E.shape[-1]
    s2 = bartlett_lrv(E, auto_bandwidth(E, k, BANDWIDTH_RULE))
    S = np.cumsum(E, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.einsum("bt,bt->b", S, S) / (s2 * T * T)


@dataclass(frozen=True)
class NullModel:
    """Frozen deterministic design used to simulate the null distribution."""

    design: np.ndarray
    k: float = 0.9
    error_scale: float = 1.0
    replications: int = 10_000
    seed: int = 0

    def __post_init__(self) -> None:
        X = np.asarray(self.design, dtype=float)
        if X.ndim != 2 or np.linalg.matrix_rank(X) < X.shape[1]:
            raise RankDeficient("null design is rank deficient")
        if self.error_scale <= 0:
            raise ValueError("error_scale must be positive")
        object.__setattr__(self, "design", X)


def simulate_critical_values(
    null: NullModel, cache: mc.CvCache | None = None, workers: int = 1
) -> tuple[float, float, float]:
    """90/95/99% quantiles of the statistic under stationary i.i.d. errors."""
    X = null.design
    Q, _ = np.linalg.qr(X)
    key = {"test": "kpss", "design": X, "k": null.k, "B": null.replications, "seed": null.seed}

    def draw(rng, n):
        e = null.error_scale * rng.standard_normal((n, X.shape[0]))
        return lm_statistics(e - (e @ Q) @ Q.T, null.k)

    def compute():
        stats = mc.run_blocks(draw, null.replications, null.seed, key, workers)
        return {"cv": list(mc.upper_quantiles(stats))}

    # scale is irrelevant to the statistic, so it is left out of the key
    value = compute() if cache is None else cache.get_or_compute(key, compute)
    return tuple(value["cv"])


@dataclass(frozen=True)
class StationarityReport:
    spec: TrendSpec
    fit: FitResult
    statistic: float
    cv10: float
    cv5: float
    cv1: float
    k: float

    def critical_value(self, alpha: float) -> float:
        return dict(zip(mc.LEVELS, (self.cv10, self.cv5, self.cv1)))[_match(alpha)]

    def stationary_at(self, alpha: float) -> bool:
        return self.statistic <= self.critical_value(alpha)


def _match(alpha: float) -> float:
    for a in mc.LEVELS:
        if abs(a - alpha) < 1e-9:
            return a
    raise ValueError(f"significance level must be one of {mc.LEVELS}")


def stationarity_test(
    y,
    spec: TrendSpec,
    kind: ChangeKind | None = None,
    k: float = 0.9,
    sim: SimConfig | None = None,
    nls: NlsConfig | None = None,
    fitted: tuple[TrendSpec, FitResult] | None = None,
) -> StationarityReport:
    """Fit the trend implied by ``spec`` (class and number of changes) and test stationarity.

    ``fitted`` skips the estimation step, which lets several ``k`` values
    share one fit.
    """
    y = as_array(y)
    sim = sim or SimConfig()
    kind = kind or spec.kind
    if fitted is None:
        fitted = fit_trend(y, spec.model_class, spec.n_changes, kind, nls)
    est_spec, fit = fitted
    stat = lm_statistic(fit.residuals, k)
    null = NullModel(build_design(est_spec, y.shape[0]), k, 1.0, sim.replications, sim.seed)
    cvs = simulate_critical_values(null, sim.cache, sim.workers)
    return StationarityReport(est_spec, fit, stat, *cvs, k=k)


def select_model_kind(break_report: StationarityReport, smooth_report: StationarityReport) -> Literal["break", "smooth"]:
    """Majority vote of SIC, AIC (lower wins) and adjusted R^2 (higher wins); ties go to smooth."""
    b, s = break_report.fit, smooth_report.fit
    votes = 0
    for smooth_better, break_better in (
        (s.sic < b.sic, b.sic < s.sic),
        (s.aic < b.aic, b.aic < s.aic),
        (s.adj_r2 > b.adj_r2, b.adj_r2 > s.adj_r2),
    ):
        votes += int(smooth_better) - int(break_better)
    return "break" if votes < 0 else "smooth"
