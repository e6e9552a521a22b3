"""End-to-end analysis of a panel and flat table projections of the results."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

import numpy as np

from . import montecarlo as mc
from .convergence import (
    ClassifierConfig,
    RegimeLayout,
    beta_fit_break,
    beta_fit_smooth,
    classify_all,
    estimate_change_dates,
)
from .errors import ConfigError, QuadconvError
from .regression import NlsConfig, TrendSpec, fit_trend
from .series import (
    GroupConfig,
    Panel,
    TimeSeries,
    change_year,
    check_length,
    group_mean_log_series,
    relative_series,
)
from .stationarity import StationarityReport, select_model_kind, stationarity_test
from .trend_tests import ChangeStructure, SimConfig, TestOutcome, select_change_structure

log = logging.getLogger(__name__)

Mode = Literal["joint", "groups", "all", "per-capita-only"]
MODES = ("joint", "groups", "all", "per-capita-only")
WHOLE_SAMPLE = "whole sample"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class AnalysisConfig:
    groups: tuple[GroupConfig, ...] = ()
    mode: Mode = "joint"
    ks: tuple[float, ...] = (0.5, 0.9)
    max_changes: int = 2
    replications: int = 10_000
    seed: int = 0
    alphas: tuple[float, ...] = (0.10, 0.05, 0.01)
    ladder_alpha: float = 0.10
    stationarity_alpha: float = 0.05
    cache_dir: Path | None = None
    jobs: int = 1
    nls: NlsConfig = field(default_factory=NlsConfig)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.max_changes not in (1, 2):
            raise ConfigError("max_changes must be 1 or 2")
        if self.replications < 1000:
            raise ConfigError("B must be at least 1000")
        if not self.ks or any(not 0 < k <= 1 for k in self.ks):
            raise ConfigError("k values must lie in (0, 1]")
        for a in (*self.alphas, self.ladder_alpha, self.stationarity_alpha):
            if not any(abs(a - lv) < 1e-9 for lv in mc.LEVELS):
                raise ConfigError(f"significance levels must be among {mc.LEVELS}")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")

    @property
    def decision_k(self) -> float:
        """k whose stationarity verdict selects levels vs differences for date estimation."""
        return max(self.ks)

    def sim(self) -> SimConfig:
        cache = mc.CvCache(self.cache_dir) if self.cache_dir is not None else None
        return SimConfig(self.replications, self.seed, cache, 1)


class StageError(QuadconvError):
    """Wraps a module error with the series and pipeline stage it came from."""

    def __init__(self, series: str, stage: str, cause: QuadconvError) -> None:
        super().__init__(f"series={series!r} stage={stage}: {cause}")
        self.series = series
        self.stage = stage
        self.cause = cause
        self.exit_code = cause.exit_code


# ---------------------------------------------------------------------------
# serialisation helpers


def _f(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _outcome(o: TestOutcome | None) -> dict | None:
    if o is None:
        return None
    out = {"statistic": _f(o.statistic), "cv10": _f(o.cv10), "cv5": _f(o.cv5), "cv1": _f(o.cv1),
           "reject": {str(a): o.reject(a) for a in mc.LEVELS}}
    if o.level_statistics is not None:
        out["level_statistics"] = {str(a): _f(v) for a, v in o.level_statistics.items()}
    return out


def _structure(cs: ChangeStructure) -> dict:
    return {
        "label": cs.label,
        "expw_general": _outcome(cs.general),
        "expw_unrestricted": _outcome(cs.unrestricted),
        "first_break_index": cs.first_break,
        "expw21_general": _outcome(cs.two_vs_one_general),
        "expw21_unrestricted": _outcome(cs.two_vs_one_unrestricted),
        "level_u": {f"{m:.2f}": _outcome(o) for m, o in cs.level.items()},
        "n_level_breaks": cs.n_level,
        "ambiguous": cs.ambiguous,
    }


def _change_years(series: TimeSeries, spec: TrendSpec) -> list[int]:
    return [change_year(series.first_year, p, len(series)) for p in spec.positions]


def _stationarity(series: TimeSeries, reps: dict[float, StationarityReport]) -> dict:
    any_rep = next(iter(reps.values()))
    fit, spec = any_rep.fit, any_rep.spec
    return {
        "model": spec.label,
        "positions": [_f(p) for p in spec.positions],
        "change_years": _change_years(series, spec),
        "speeds": [_f(g) for g in spec.speeds],
        "ssr": _f(fit.ssr),
        "sic": _f(fit.sic),
        "aic": _f(fit.aic),
        "adj_r2": _f(fit.adj_r2),
        "n_params": fit.n_params,
        "converged": fit.converged,
        "by_k": {
            f"{k:g}": {
                "statistic": _f(r.statistic), "cv10": _f(r.cv10), "cv5": _f(r.cv5), "cv1": _f(r.cv1),
                "stationary": {str(a): r.stationary_at(a) for a in mc.LEVELS},
            }
            for k, r in reps.items()
        },
    }


# ---------------------------------------------------------------------------
# per-series pipeline


def _stage(series: TimeSeries, stage: str, fn: Callable[[], Any]) -> Any:
    try:
        return fn()
    except StageError:
        raise
    except QuadconvError as exc:
        raise StageError(series.name, stage, exc) from exc


def analyze_series(series: TimeSeries, cfg: AnalysisConfig, convergence: bool) -> dict:
    """Selection ladder, stationarity tests for both change kinds and, optionally, beta-convergence."""
    sim = cfg.sim()
    y = series.values
    _stage(series, "input", lambda: check_length(series))
    log.info("analysing %s (T=%d)", series.name, len(series))

    cs = _stage(series, "change-structure",
                lambda: select_change_structure(y, cfg.ladder_alpha, cfg.max_changes, sim=sim))
    spec = cs.spec
    kinds = ("break", "smooth") if spec.n_changes else ("break",)

    stat_reports: dict[str, dict[float, StationarityReport]] = {}
    for kind in kinds:
        def run(kind=kind):
            fitted = fit_trend(y, spec.model_class, spec.n_changes, kind, cfg.nls)
            return {k: stationarity_test(y, spec, kind, k, sim, cfg.nls, fitted) for k in cfg.ks}
        stat_reports[kind] = _stage(series, f"stationarity-{kind}", run)

    if spec.n_changes:
        kd = cfg.decision_k
        selected = select_model_kind(stat_reports["break"][kd], stat_reports["smooth"][kd])
    else:
        selected = "break"
    chosen = stat_reports[selected][cfg.decision_k]
    stationary = chosen.stationary_at(cfg.stationarity_alpha)

    out: dict[str, Any] = {
        "series": series.name,
        "first_year": series.first_year,
        "T": len(series),
        "structure": _structure(cs),
        "stationarity": {kind: _stationarity(series, reps) for kind, reps in stat_reports.items()},
        "selected_kind": selected if spec.n_changes else None,
        "decision_k": cfg.decision_k,
        "stationary": stationary,
    }
    if convergence:
        out["convergence"] = _stage(series, "convergence",
                                    lambda: _convergence(series, spec, selected, stationary, cfg))
    return out


def _convergence(series: TimeSeries, spec: TrendSpec, kind: str, stationary: bool, cfg: AnalysisConfig) -> dict:
    y = series.values
    T = len(series)
    if spec.n_changes:
        layout, est = estimate_change_dates(y, spec, stationary, kind, cfg.nls)
    else:
        layout, est = RegimeLayout.build(T, (), "break"), spec
    if layout.kind == "smooth" and layout.change_indices:
        fit = beta_fit_smooth(y, layout)
    else:
        fit = beta_fit_break(y, layout)
    verdicts = classify_all(fit, layout, ClassifierConfig(alpha=0.10))
    years = [series.first_year + i for i in layout.change_indices]
    return {
        "kind": layout.kind,
        "estimated_in": "levels" if stationary else "differences",
        "change_indices": list(layout.change_indices),
        "change_years": years,
        "speeds": [_f(g) for g in layout.speeds],
        "merged_indices": list(layout.merged),
        "beta": {"estimate": _f(fit.beta), "t": _f(fit.t_beta)},
        "regimes": [
            {
                "regime": v.regime,
                "first_year": series.first_year + layout.bounds[v.regime - 1],
                "last_year": series.first_year + layout.bounds[v.regime] - 1,
                "delta": _f(fit.delta[v.regime - 1]),
                "t_delta": _f(fit.t_delta[v.regime - 1]),
                "eta": _f(fit.eta[v.regime - 1]),
                "t_eta": _f(fit.t_eta[v.regime - 1]),
                "start_sign": v.start_sign,
                "median_derivative": _f(v.median_derivative),
                "mean_derivative": _f(v.mean_derivative),
                "label": v.label,
            }
            for v in verdicts
        ],
        "labels": "".join(v.label for v in verdicts),
    }


# ---------------------------------------------------------------------------
# panel pipeline


def _map(fn, items, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def whole_sample(panel: Panel) -> GroupConfig:
    return GroupConfig(WHOLE_SAMPLE, panel.countries)


def analyze_panel(panel: Panel, cfg: AnalysisConfig) -> dict:
    """Run the requested sections and return the report document."""
    for g in cfg.groups:
        g.validate(panel)
    everyone = whole_sample(panel)
    report: dict[str, Any] = {"schema": SCHEMA_VERSION, "config": _config_doc(cfg, panel)}

    per_capita = [panel.log_series(c) for c in panel.countries]
    per_capita += [group_mean_log_series(panel, g) for g in (*cfg.groups, everyone)]
    report["per_capita"] = _map(lambda s: analyze_series(s, cfg, convergence=False), per_capita, cfg.jobs)

    if cfg.mode in ("joint", "all"):
        rel = [relative_series(panel, everyone, c) for c in panel.countries]
        report["joint"] = _map(lambda s: analyze_series(s, cfg, convergence=True), rel, cfg.jobs)
    if cfg.mode in ("groups", "all"):
        if not cfg.groups:
            raise ConfigError("groups mode needs a --groups configuration")
        jobs = [(g, relative_series(panel, g, c)) for g in cfg.groups for c in g.members]

        def one(item):
            g, s = item
            return {"group": g.name, **analyze_series(s, cfg, convergence=True)}

        report["groups"] = _map(one, jobs, cfg.jobs)
    return report


def _config_doc(cfg: AnalysisConfig, panel: Panel) -> dict:
    digest = hashlib.sha256(np.ascontiguousarray(panel.values).tobytes()).hexdigest()
    return {
        "mode": cfg.mode,
        "k": list(cfg.ks),
        "max_changes": cfg.max_changes,
        "B": cfg.replications,
        "seed": cfg.seed,
        "alpha": list(cfg.alphas),
        "ladder_alpha": cfg.ladder_alpha,
        "stationarity_alpha": cfg.stationarity_alpha,
        "groups": {g.name: list(g.members) for g in cfg.groups},
        "first_year": panel.first_year,
        "T": panel.T,
        "countries": list(panel.countries),
        "input_digest": digest,
    }


def dumps(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# tables


def _stationarity_rows(section: list[dict], ks) -> list[dict]:
    rows = []
    for r in section:
        for kind, st in r["stationarity"].items():
            row = {"group": r.get("group", ""), "series": r["series"], "label": r["structure"]["label"],
                   "kind": kind, "selected": kind == (r["selected_kind"] or "break"),
                   "change_years": " ".join(map(str, st["change_years"])),
                   "positions": " ".join(f"{p:.4f}" for p in st["positions"]),
                   "speeds": " ".join(f"{g:.2f}" for g in st["speeds"]),
                   "sic": st["sic"], "aic": st["aic"], "adj_r2": st["adj_r2"]}
            for k in ks:
                by = st["by_k"][f"{k:g}"]
                for name in ("statistic", "cv10", "cv5", "cv1"):
                    row[f"{name}_k{k:g}"] = by[name]
            rows.append(row)
    return rows


def _structure_rows(report: dict) -> list[dict]:
    rows = []
    for section in ("per_capita", "joint", "groups"):
        for r in report.get(section, []):
            s = r["structure"]
            row = {"section": section, "group": r.get("group", ""), "series": r["series"], "label": s["label"]}
            for name in ("expw_general", "expw_unrestricted", "expw21_general", "expw21_unrestricted"):
                o = s[name]
                row[name] = o["statistic"] if o else None
                row[f"{name}_cv5"] = o["cv5"] if o else None
            for m, o in s["level_u"].items():
                row[f"u_m{m}"] = o["statistic"]
                row[f"u_m{m}_cv5"] = o["cv5"]
            row["n_level_breaks"] = s["n_level_breaks"]
            rows.append(row)
    return rows


def _convergence_rows(section: list[dict]) -> list[dict]:
    rows = []
    for r in section:
        c = r["convergence"]
        for g in c["regimes"]:
            rows.append({"group": r.get("group", ""), "series": r["series"], "kind": c["kind"],
                         "estimated_in": c["estimated_in"], "beta": c["beta"]["estimate"],
                         "t_beta": c["beta"]["t"], **{k: g[k] for k in (
                             "regime", "first_year", "last_year", "delta", "t_delta", "eta", "t_eta",
                             "start_sign", "median_derivative", "mean_derivative", "label")}})
    return rows


def tables(report: dict) -> dict[str, list[dict]]:
    ks = report["config"]["k"]
    out = {
        "table1": _stationarity_rows(report["per_capita"], ks),
        "table2": _structure_rows(report),
    }
    if "joint" in report:
        out["table3"] = _stationarity_rows(report["joint"], ks)
        out["table5"] = _convergence_rows(report["joint"])
    if "groups" in report:
        out["table4"] = _stationarity_rows(report["groups"], ks)
        out["table6"] = _convergence_rows(report["groups"])
    return dict(sorted(out.items()))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_outputs(report: dict, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "report.json"]
    paths[0].write_text(dumps(report), encoding="utf-8")
    for name, rows in tables(report).items():
        path = out_dir / f"{name}.csv"
        header: list[str] = []
        for row in rows:
            header += [k for k in row if k not in header]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(row.get(k)) for k in header])
        paths.append(path)
    return paths
