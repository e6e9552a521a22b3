"""Bartlett-kernel long-run variance and automatic bandwidth selection.

All functions accept residual arrays of shape ``(..., T)`` and work along the
last axis, so Monte Carlo batches can be processed in one call.

Two data-driven bandwidth rules are provided:

``"kurozumi"``
    AR(1) plug-in bandwidth for the Bartlett kernel, capped by the same
    formula evaluated at the user constant ``k`` (0 < k < 1).  This is the
    rule used by the stationarity statistic: ``k`` bounds the bandwidth so
    that highly persistent residuals cannot inflate it without limit.
``"andrews"``
    The same AR(1) plug-in without a cap, scaled by ``k``.  Used by the
    trend-stability tests and HAC t-statistics: it stays small for nearly
    white residuals, where the nonparametric rule below can explode.
``"nw94"``
    Newey-West (1994) nonparametric plug-in, scaled by ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

BandwidthMethod = Literal["kurozumi", "andrews", "nw94"]

_BARTLETT_CONST = 1.1447


@dataclass(frozen=True)
class LrvEstimate:
    omega2: float
    bandwidth: int


def autocovariances(e: np.ndarray, max_lag: int) -> np.ndarray:
    """gamma_j = T^-1 sum_{t>j} e_t e_{t-j} for j = 0..max_lag, stacked on the last axis."""
    e = np.asarray(e, dtype=float)
    T = e.shape[-1]
    out = np.empty(e.shape[:-1] + (max_lag + 1,))
    for j in range(max_lag + 1):
        out[..., j] = np.einsum("...t,...t->...", e[..., j:], e[..., : T - j]) / T
    return out


def bartlett_lrv(e: np.ndarray, bandwidth) -> np.ndarray | float:
    """gamma_0 + 2 sum_{j=1..l} (1 - j/(l+1)) gamma_j.

    ``bandwidth`` may be a scalar or an integer array matching the leading
    axes of ``e``.
    """
    e = np.asarray(e, dtype=float)
    T = e.shape[-1]
    bw = np.asarray(bandwidth)
    if np.any(bw < 0) or np.any(bw >= T):
        raise ValueError(f"bandwidth must lie in [0, {T - 1}]")
    lmax = int(bw.max()) if bw.size else 0
    gam = autocovariances(e, lmax)
    j = np.arange(1, lmax + 1)
    weights = np.clip(1.0 - j / (bw[..., None] + 1.0), 0.0, None)
    omega2 = gam[..., 0] + 2.0 * np.sum(weights * gam[..., 1:], axis=-1)
    if omega2.ndim == 0:
        return float(omega2)
    return omega2


def _ar1_plugin(rho: np.ndarray, T: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = 4.0 * rho**2 / ((1.0 + rho) ** 2 * (1.0 - rho) ** 2)
        val = _BARTLETT_CONST * np.cbrt(a1 * T)
    return np.where(np.isfinite(val), val, np.inf)


def auto_bandwidth(e: np.ndarray, k: float, method: BandwidthMethod = "kurozumi"):
    """Data-driven Bartlett bandwidth, floored to an integer in [0, T-1].

    All-zero residuals give bandwidth 0.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    e = np.asarray(e, dtype=float)
    T = e.shape[-1]
    if T < 3:
        raise ValueError("need at least 3 observations")

    if method in ("kurozumi", "andrews"):
        num = np.einsum("...t,...t->...", e[..., 1:], e[..., :-1])
        den = np.einsum("...t,...t->...", e[..., :-1], e[..., :-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(den > 0, num / den, 0.0)
        raw = _ar1_plugin(rho, T)
        if method == "andrews":
            bw = k * raw
        else:
            cap = np.inf if k >= 1.0 else float(_ar1_plugin(np.asarray(k), T))
            bw = np.minimum(raw, cap)
    elif method == "nw94":
        n = int(4.0 * (T / 100.0) ** (2.0 / 9.0))
        n = max(1, min(n, T - 1))
        gam = autocovariances(e, n)
        j = np.arange(1, n + 1)
        s0 = gam[..., 0] + 2.0 * gam[..., 1:].sum(axis=-1)
        s1 = 2.0 * (j * gam[..., 1:]).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(s0 > 0, s1 / s0, 0.0)
        bw = k * _BARTLETT_CONST * np.cbrt(ratio**2) * np.cbrt(T)
    else:
        raise ValueError(f"unknown bandwidth method {method!r}")

    bw = np.clip(np.floor(np.minimum(bw, T - 1)), 0, T - 1).astype(int)
    if bw.ndim == 0:
        return int(bw)
    return bw


def long_run_variance(
    e: np.ndarray,
    k: float = 1.0,
    method: BandwidthMethod = "nw94",
    bandwidth: int | None = None,
) -> LrvEstimate:
    e = np.asarray(e, dtype=float)
    bw = auto_bandwidth(e, k, method) if bandwidth is None else int(bandwidth)
    return LrvEstimate(omega2=float(bartlett_lrv(e, bw)), bandwidth=bw)


def lrv_pair(fit, bandwidth: int | None = None, k: float = 1.0):
    """Long-run variances of level residuals (I(0) case) and their first differences (I(1) case).

    ``fit`` is a :class:`~quadconv.regression.FitResult` or a residual array.
    Returns ``(omega_u2, omega_v2)``. With ``bandwidth=None`` each uses its
    own NW94 automatic bandwidth.
    """
    u = np.asarray(getattr(fit, "residuals", fit), dtype=float)
    v = np.diff(u, axis=-1)
    if bandwidth is None:
        bw_u = auto_bandwidth(u, k, "nw94")
        bw_v = auto_bandwidth(v, k, "nw94")
    else:
        bw_u = bw_v = bandwidth
    return bartlett_lrv(u, bw_u), bartlett_lrv(v, bw_v)
