"""Trend-change detection, stationarity testing and beta-convergence for relative time series."""

from __future__ import annotations

from .convergence import (
    BetaFit,
    ClassifierConfig,
    ConvergenceVerdict,
    RegimeLayout,
    beta_fit_break,
    beta_fit_smooth,
    classify_all,
    classify_regime,
    estimate_change_dates,
    regime_median_derivative,
)
from .errors import ConfigError, DataError, NumericError, QuadconvError
from .lrv import auto_bandwidth, bartlett_lrv, long_run_variance, lrv_pair
from .regression import (
    FitResult,
    NlsConfig,
    TrendSpec,
    build_design,
    fit_break_model,
    fit_smooth_model,
    fit_trend,
    ols_fit,
    sigmoid,
)
from .series import GroupConfig, Panel, TimeSeries, load_panel, relative_series
from .stationarity import (
    NullModel,
    StationarityReport,
    lm_statistic,
    select_model_kind,
    simulate_critical_values,
    stationarity_test,
)
from .trend_tests import (
    ExpwConfig,
    LevelBreakConfig,
    SimConfig,
    TestOutcome,
    count_level_breaks,
    expw_one_break,
    expw_two_vs_one,
    level_break_u,
    select_change_structure,
)

__version__ = "0.1.0"
