"""Quadratic trend designs with breaks or logistic transitions, OLS and NLS.

Time enters through ``s = t/T`` with ``t = 1..T``.  A design for ``n``
changes has columns::

    [1, s, s^2, c_1, ..., c_n, s*c_1, ..., s*c_n]

where ``c_k`` is the break dummy ``1(t > T_k)`` or the logistic weight
``1 / (1 + exp(-gamma_k (s - lambda_k)))``.  Model I keeps only the level
columns; for breaks the Model III slope column is ``1(t > T_k)(t - T_k)/T``.

Smooth models are fitted by profiling: the linear coefficients are solved by
OLS for every point of a (lambda, gamma) grid, then the best point is refined
jointly by Levenberg-Marquardt.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .errors import NoAdmissibleDates, RankDeficient
from .series import TimeSeries, as_array, break_index

log = logging.getLogger(__name__)

ModelClass = Literal["0", "I", "III"]
ChangeKind = Literal["break", "smooth"]

DEFAULT_TRIMMING = (0.05, 0.95)


def default_gamma_grid() -> np.ndarray:
    return np.geomspace(1.0, 300.0, 22)


@dataclass(frozen=True)
class TrendSpec:
    """Model class, change kind and change parameters of a trend function."""

    model_class: ModelClass = "0"
    kind: ChangeKind = "break"
    positions: tuple[float, ...] = ()
    speeds: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", tuple(float(p) for p in self.positions))
        object.__setattr__(self, "speeds", tuple(float(g) for g in self.speeds))
        if self.model_class not in ("0", "I", "III"):
            raise ValueError(f"unknown model class {self.model_class!r}")
        if self.kind not in ("break", "smooth"):
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.model_class == "0" and self.positions:
            raise ValueError("model 0 has no changes")
        if any(not 0.0 < p < 1.0 for p in self.positions):
            raise ValueError("change positions must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("change positions must be strictly increasing")
        if self.kind == "smooth" and len(self.speeds) != len(self.positions):
            raise ValueError("smooth changes need one speed per position")
        if any(g < 0 for g in self.speeds):
            raise ValueError("transition speeds must be non-negative")

    @property
    def n_changes(self) -> int:
        return len(self.positions)

    @property
    def label(self) -> str:
        return "0" if self.model_class == "0" else f"{self.model_class}-{self.n_changes}"

    def break_indices(self, T: int) -> tuple[int, ...]:
        return tuple(break_index(p, T) for p in self.positions)

    @property
    def n_nonlinear(self) -> int:
        """Estimated change parameters counted by the information criteria."""
        return self.n_changes * (2 if self.kind == "smooth" else 1)


@dataclass(frozen=True)
class FitResult:
    coefficients: np.ndarray
    residuals: np.ndarray
    ssr: float
    sic: float
    aic: float
    adj_r2: float
    n_params: int
    fitted: np.ndarray
    converged: bool = True

    @property
    def nobs(self) -> int:
        return self.residuals.shape[0]


@dataclass(frozen=True)
class NlsConfig:
    trimming: tuple[float, float] = DEFAULT_TRIMMING
    gamma_grid: np.ndarray = field(default_factory=default_gamma_grid)
    max_iter: int = 200
    tol: float = 1e-10
    min_separation: float = 0.02
    gamma_max: float = 1000.0

    def __post_init__(self) -> None:
        grid = np.asarray(self.gamma_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("gamma_grid must be a sorted array of positive values")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        object.__setattr__(self, "gamma_grid", grid)


def time_grid(T: int) -> np.ndarray:
    return np.arange(1, T + 1) / T


def sigmoid(s, lam, gamma):
    """Logistic weight 1 / (1 + exp(-gamma (s - lam)))."""
    z = np.multiply(gamma, np.subtract(s, lam))
    # tanh form is exact at z = 0 and never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * z))
    return float(out) if np.ndim(out) == 0 else out


def _change_columns(spec: TrendSpec, T: int) -> list[np.ndarray]:
    s = time_grid(T)
    t = np.arange(1, T + 1)
    level, slope = [], []
    if spec.kind == "break":
        for tb in spec.break_indices(T):
            du = (t > tb).astype(float)
            level.append(du)
            slope.append(du * (t - tb) / T)
    else:
        for lam, gam in zip(spec.positions, spec.speeds):
            sig = sigmoid(s, lam, gam)
            level.append(sig)
            slope.append(s * sig)
    return level + (slope if spec.model_class == "III" else [])


def build_design(spec: TrendSpec, T: int) -> np.ndarray:
    s = time_grid(T)
    cols = [np.ones(T), s, s * s] + _change_columns(spec, T)
    X = np.column_stack(cols)
    if T < X.shape[1] + 5:
        raise RankDeficient(f"T={T} too small for {X.shape[1]} regressors")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficient(f"design for {spec.label} ({spec.kind}) is rank deficient")
    return X


def difference_design(X: np.ndarray) -> np.ndarray:
    """Design for the first-differenced series: difference rows and drop the constant."""
    return np.diff(X, axis=0)[:, 1:]


def information_criteria(ssr: float, T: int, p: int) -> tuple[float, float]:
    ll = T * math.log(max(ssr, np.finfo(float).tiny) / T)
    return ll + p * math.log(T), ll + 2 * p


def _adj_r2(y: np.ndarray, ssr: float, p: int) -> float:
    T = y.shape[0]
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 1.0 if ssr == 0.0 else float("-inf")
    return 1.0 - (ssr / (T - p)) / (sst / (T - 1))


def ols_fit(X: np.ndarray, y, extra_params: int = 0) -> FitResult:
    """OLS of ``y`` on ``X``.

    ``extra_params`` adds estimated change parameters (dates, speeds) to the
    parameter count used by SIC, AIC and adjusted R^2.
    """
    X = np.asarray(X, dtype=float)
    y = as_array(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError("design and series lengths differ")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficient(f"design has rank {rank} < {X.shape[1]}")
    fitted = X @ coef
    resid = y - fitted
    ssr = float(resid @ resid)
    T = y.shape[0]
    p = X.shape[1] + extra_params
    sic, aic = information_criteria(ssr, T, p)
    return FitResult(
        coefficients=coef,
        residuals=resid,
        ssr=ssr,
        sic=sic,
        aic=aic,
        adj_r2=_adj_r2(y, ssr, p),
        n_params=p,
        fitted=fitted,
    )


def fit_spec(y, spec: TrendSpec, difference: bool = False) -> FitResult:
    """OLS fit with the change parameters of ``spec`` held fixed."""
    y = as_array(y)
    X = build_design(spec, y.shape[0])
    if difference:
        return ols_fit(difference_design(X), np.diff(y), spec.n_nonlinear)
    return ols_fit(X, y, spec.n_nonlinear)


# ---------------------------------------------------------------------------
# grid search


def admissible_indices(T: int, trimming: tuple[float, float]) -> np.ndarray:
    lo_frac, hi_frac = trimming
    if not 0.0 < lo_frac < hi_frac < 1.0:
        raise ValueError("trimming must satisfy 0 < lower < upper < 1")
    lo = max(2, int(math.floor(lo_frac * T)))
    hi = min(T - 2, int(math.floor(hi_frac * T)))
    return np.arange(lo, hi + 1)


def _separation(T: int, min_separation: float) -> int:
    return max(1, int(math.ceil(min_separation * T - 1e-9)))


class _Profiler:
    """Residualises targets and change columns on the quadratic base."""

    def __init__(self, y: np.ndarray, difference: bool) -> None:
        T = y.shape[0]
        s = time_grid(T)
        base = np.column_stack([np.ones(T), s, s * s])
        self.T = T
        self.difference = difference
        if difference:
            base = difference_design(base)
            y = np.diff(y)
        self.q_base, _ = np.linalg.qr(base)
        self.ystar = self.residualise(y)
        self.yy = float(self.ystar @ self.ystar)

    def transform(self, cols: np.ndarray) -> np.ndarray:
        """cols: (..., T, q) level columns -> residualised (..., T', q)."""
        if self.difference:
            cols = np.diff(cols, axis=-2)
        return self.residualise(cols)

    def residualise(self, a: np.ndarray) -> np.ndarray:
        Q = self.q_base
        if a.ndim == 1:
            return a - Q @ (Q.T @ a)
        return a - np.einsum("tk,...kq->...tq", Q, np.einsum("tk,...tq->...kq", Q, a))


def _inv_small(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of stacked 1x1 or 2x2 SPD blocks, plus a singularity mask."""
    q = A.shape[-1]
    if q == 1:
        a = A[..., 0, 0]
        bad = ~(a > 1e-14 * max(float(np.max(np.abs(a), initial=0.0)), 1e-300))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(bad, 0.0, 1.0 / a)[..., None, None]
        return inv, bad
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    det = a * d - b * c
    bad = ~(det > 1e-12 * np.abs(a * d))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(bad, 0.0, 1.0 / det)
    inv = np.stack([np.stack([d * r, -b * r], -1), np.stack([-c * r, a * r], -1)], -2)
    return inv, bad


def _one_change_ssr(prof: _Profiler, Z: np.ndarray) -> np.ndarray:
    """SSR for every candidate block ``Z`` (..., T', q)."""
    A = np.einsum("...tq,...tr->...qr", Z, Z)
    b = np.einsum("...tq,t->...q", Z, prof.ystar)
    Ainv, bad = _inv_small(A)
    explained = np.einsum("...q,...qr,...r->...", b, Ainv, b)
    ssr = np.maximum(prof.yy - explained, 0.0)
    return np.where(bad, np.inf, ssr)


def _block_moments(prof: _Profiler, Z: np.ndarray):
    """Gram blocks Z'Z and Z'y* for candidate blocks Z (L, G, T', q)."""
    A = np.einsum("lgtq,lgtr->lgqr", Z, Z)
    b = np.einsum("lgtq,t->lgq", Z, prof.ystar)
    return A, b


def _two_change_ssr(prof, Z, A, b, i1: int, start: int) -> np.ndarray:
    """SSR pairing first position ``i1`` with every second position from ``start`` on.

    Returns shape (L', G, G) indexed [second position, first speed, second speed].
    """
    L, G, Tp, q = Z.shape
    Z1 = Z[i1]
    Z2 = Z[start:]
    Lp = Z2.shape[0]
    # cross products through one BLAS call: (G q, T') @ (T', L' G q)
    C = Z1.transpose(0, 2, 1).reshape(G * q, Tp) @ Z2.transpose(2, 0, 1, 3).reshape(Tp, Lp * G * q)
    C = C.reshape(G, q, Lp, G, q).transpose(2, 0, 3, 1, 4)  # (L', G, G, q, q)
    A1inv, bad1 = _inv_small(A[i1])
    x1 = np.einsum("gqr,gr->gq", A1inv, b[i1])
    first = np.einsum("gq,gq->g", b[i1], x1)
    # Schur complement of the first block
    A1invC = np.einsum("gqr,lghrs->lghqs", A1inv, C)
    S = A[start:][:, None, :, :, :] - np.einsum("lghqr,lghqs->lghrs", C, A1invC)
    r = b[start:][:, None, :, :] - np.einsum("lghqr,gq->lghr", C, x1)
    Sinv, bad2 = _inv_small(S)
    second = np.einsum("lghq,lghqr,lghr->lgh", r, Sinv, r)
    ssr = np.maximum(prof.yy - first[None, :, None] - second, 0.0)
    bad = bad1[None, :, None] | bad2
    return np.where(bad, np.inf, ssr)


def _candidate_blocks(model_class: str, kind: str, T: int, idx: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Level-scale change columns, shape (L, G, T, q)."""
    t = np.arange(1, T + 1)
    s = t / T
    if kind == "break":
        du = (t[None, :] > idx[:, None]).astype(float)
        cols = [du]
        if model_class == "III":
            cols.append(du * (t[None, :] - idx[:, None]) / T)
        return np.stack(cols, axis=-1)[:, None, :, :]
    lam = idx / T
    sig = sigmoid(s[None, None, :], lam[:, None, None], gammas[None, :, None])
    cols = [sig]
    if model_class == "III":
        cols.append(s * sig)
    return np.stack(cols, axis=-1)


def _grid_search(y, model_class, kind, n, trimming, min_separation, gammas, difference):
    """Return (best index tuple, best gamma tuple, best ssr) over the full grid."""
    T = y.shape[0]
    idx = admissible_indices(T, trimming)
    sep = _separation(T, min_separation)
    if idx.size == 0 or (n == 2 and idx.size <= sep):
        raise NoAdmissibleDates(f"no admissible change dates for T={T}, trimming={trimming}")
    gammas = np.asarray([0.0]) if kind == "break" else np.asarray(gammas, dtype=float)
    prof = _Profiler(y, difference)
    Z = prof.transform(_candidate_blocks(model_class, kind, T, idx, gammas))

    if n == 1:
        ssr = _one_change_ssr(prof, Z)
        flat = int(np.argmin(ssr))
        i, g = np.unravel_index(flat, ssr.shape)
        best = float(ssr[i, g])
        if not np.isfinite(best):
            raise NoAdmissibleDates("every candidate design is rank deficient")
        return (int(idx[i]),), (float(gammas[g]),), best

    A, b = _block_moments(prof, Z)
    best = (np.inf, None)
    for i1 in range(idx.size - sep):
        ssr = _two_change_ssr(prof, Z, A, b, i1, i1 + sep)
        flat = int(np.argmin(ssr))
        if ssr.flat[flat] < best[0]:
            l, g1, g2 = np.unravel_index(flat, ssr.shape)
            best = (float(ssr.flat[flat]), (i1, i1 + sep + l, g1, g2))
    if best[1] is None:
        raise NoAdmissibleDates("every candidate design is rank deficient")
    i1, i2, g1, g2 = best[1]
    return (int(idx[i1]), int(idx[i2])), (float(gammas[g1]), float(gammas[g2])), best[0]


def _check_n(n: int) -> None:
    if n not in (1, 2):
        raise ValueError("the number of changes must be 1 or 2")


def fit_break_model(
    y,
    model_class: ModelClass,
    n: int,
    trimming: tuple[float, float] = DEFAULT_TRIMMING,
    min_separation: float = 0.02,
    difference: bool = False,
) -> tuple[TrendSpec, FitResult]:
    """Exhaustive least-squares search over admissible break dates."""
    _check_n(n)
    y = as_array(y)
    T = y.shape[0]
    dates, _, _ = _grid_search(y, model_class, "break", n, trimming, min_separation, None, difference)
    spec = TrendSpec(model_class, "break", tuple(d / T for d in dates))
    return spec, fit_spec(y, spec, difference)


# ---------------------------------------------------------------------------
# smooth transitions


def _unpack(theta: np.ndarray, model_class: str, n: int, n_base: int):
    p_lin = n_base + n * (2 if model_class == "III" else 1)
    lin = theta[:p_lin]
    lam = theta[p_lin : p_lin + n]
    gam = theta[p_lin + n : p_lin + 2 * n]
    return lin, lam, gam


def smooth_mean(theta: np.ndarray, model_class: ModelClass, n: int, T: int) -> np.ndarray:
    """Deterministic trend for parameters (beta0, beta1, beta2, delta.., eta.., lambda.., gamma..)."""
    lin, lam, gam = _unpack(np.asarray(theta, dtype=float), model_class, n, 3)
    spec = TrendSpec(model_class, "smooth", tuple(lam), tuple(gam))
    s = time_grid(T)
    X = np.column_stack([np.ones(T), s, s * s] + _change_columns(spec, T))
    return X @ lin


def smooth_jacobian(theta: np.ndarray, model_class: ModelClass, n: int, T: int) -> np.ndarray:
    """Analytic derivatives of :func:`smooth_mean` with respect to every parameter."""
    theta = np.asarray(theta, dtype=float)
    lin, lam, gam = _unpack(theta, model_class, n, 3)
    s = time_grid(T)
    delta = lin[3 : 3 + n]
    eta = lin[3 + n : 3 + 2 * n] if model_class == "III" else np.zeros(n)
    sig = sigmoid(s[:, None], lam[None, :], gam[None, :])
    dsig = sig * (1.0 - sig)
    amp = delta[None, :] + eta[None, :] * s[:, None]
    cols = [np.ones(T), s, s * s, *sig.T]
    if model_class == "III":
        cols += list((s[:, None] * sig).T)
    d_lam = amp * dsig * (-gam[None, :])
    d_gam = amp * dsig * (s[:, None] - lam[None, :])
    return np.column_stack(cols + list(d_lam.T) + list(d_gam.T))


def _valid_nonlinear(lam: np.ndarray, gam: np.ndarray, cfg: NlsConfig) -> bool:
    if np.any(lam <= 0.0) or np.any(lam >= 1.0):
        return False
    if np.any(np.diff(lam) <= 0.0):
        return False
    return bool(np.all(gam > 0.0) and np.all(gam <= cfg.gamma_max))


def levenberg_marquardt(
    y: np.ndarray,
    theta0: np.ndarray,
    model_class: ModelClass,
    n: int,
    cfg: NlsConfig,
    difference: bool = False,
) -> tuple[np.ndarray, float, bool]:
    """Minimise the residual sum of squares over all parameters jointly.

    Damping follows Marquardt's diagonal scaling with a x10 / /10 schedule.
    Steps leaving the admissible region (ordered positions in (0, 1),
    speeds in (0, gamma_max]) are treated as failures.
    """
    T = y.shape[0]

    def model(theta):
        f = smooth_mean(theta, model_class, n, T)
        J = smooth_jacobian(theta, model_class, n, T)
        if difference:
            return np.diff(f), difference_design(J)
        return f, J

    def drop_const(theta):
        return theta[1:] if difference else theta

    def add_const(theta_red):
        return np.concatenate([[0.0], theta_red]) if difference else theta_red

    target = np.diff(y) if difference else y
    theta = np.asarray(theta0, dtype=float).copy()
    f, J = model(theta)
    r = target - f
    ssr = float(r @ r)
    mu = 1e-3
    converged = False
    for _ in range(cfg.max_iter):
        if ssr == 0.0:
            converged = True
            break
        g = J.T @ r
        H = J.T @ J
        D = np.diag(np.maximum(np.diag(H), 1e-12))
        accepted = False
        while mu < 1e16:
            try:
                step = np.linalg.solve(H + mu * D, g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = add_const(drop_const(theta) + step)
            _, lam, gam = _unpack(cand, model_class, n, 3)
            if _valid_nonlinear(lam, gam, cfg):
                f_new, J_new = model(cand)
                r_new = target - f_new
                ssr_new = float(r_new @ r_new)
                if ssr_new < ssr:
                    rel = (ssr - ssr_new) / max(ssr, np.finfo(float).tiny)
                    theta, f, J, r, ssr = cand, f_new, J_new, r_new, ssr_new
                    mu = max(mu / 10.0, 1e-12)
                    accepted = True
                    if rel < cfg.tol:
                        converged = True
                    break
            mu *= 10.0
        if not accepted:
            # no downhill step at any damping: a stationary point for practical purposes
            converged = True
            break
        if converged:
            break
    return theta, ssr, converged


def fit_smooth_model(
    y,
    model_class: ModelClass,
    n: int,
    cfg: NlsConfig | None = None,
    difference: bool = False,
) -> tuple[TrendSpec, FitResult]:
    """Grid search over (lambda, gamma) with profiled linear terms, then LM refinement."""
    _check_n(n)
    cfg = cfg or NlsConfig()
    y = as_array(y)
    T = y.shape[0]
    dates, gams, grid_ssr = _grid_search(
        y, model_class, "smooth", n, cfg.trimming, cfg.min_separation, cfg.gamma_grid, difference
    )
    grid_spec = TrendSpec(model_class, "smooth", tuple(d / T for d in dates), gams)
    start = fit_spec(y, grid_spec, difference)
    lin0 = np.concatenate([[0.0], start.coefficients]) if difference else start.coefficients
    theta0 = np.concatenate([lin0, grid_spec.positions, grid_spec.speeds])
    theta, _, converged = levenberg_marquardt(y, theta0, model_class, n, cfg, difference)
    if not converged:
        log.warning("Levenberg-Marquardt did not converge in %d iterations", cfg.max_iter)
    _, lam, gam = _unpack(theta, model_class, n, 3)
    spec = TrendSpec(model_class, "smooth", tuple(lam), tuple(gam))
    try:
        fit = fit_spec(y, spec, difference)
    except RankDeficient:
        spec, fit = grid_spec, start
    if fit.ssr > start.ssr:
        spec, fit = grid_spec, start
    return spec, replace(fit, converged=converged)


def fit_trend(
    y,
    model_class: ModelClass,
    n: int,
    kind: ChangeKind,
    cfg: NlsConfig | None = None,
    difference: bool = False,
) -> tuple[TrendSpec, FitResult]:
    """Fit any supported trend; model 0 (or n = 0) is plain quadratic OLS."""
    y = as_array(y)
    if model_class == "0" or n == 0:
        spec = TrendSpec("0", kind)
        return spec, fit_spec(y, spec, difference)
    if kind == "break":
        cfg = cfg or NlsConfig()
        return fit_break_model(y, model_class, n, cfg.trimming, cfg.min_separation, difference)
    return fit_smooth_model(y, model_class, n, cfg, difference)

