"""Command-line entry point: ``quadconv analyze`` and ``quadconv simulate-cv``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import montecarlo as mc
from .errors import ConfigError, QuadconvError
from .regression import TrendSpec, build_design
from .reports import MODES, AnalysisConfig, analyze_panel, write_outputs
from .series import GroupConfig, load_panel
from .stationarity import NullModel, simulate_critical_values
from .trend_tests import (
    ONE_BREAK,
    SEQUENTIAL,
    ExpwConfig,
    LevelBreakConfig,
    SimConfig,
    expw_critical_values,
    level_break_critical_values,
)

log = logging.getLogger("quadconv")

CV_TESTS = ("expw", "expw-unrestricted", "expw-sequential", "level-u", "kpss")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def load_groups(path: str | Path) -> tuple[GroupConfig, ...]:
    """JSON object mapping group names to lists of country identifiers."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read group configuration {path}: {exc}") from exc
    if not isinstance(doc, dict) or not all(isinstance(v, list) for v in doc.values()):
        raise ConfigError("group configuration must map names to lists of countries")
    return tuple(GroupConfig(name, tuple(members)) for name, members in doc.items())


def _cache_dir(arg: str | None) -> Path | None:
    return Path(arg) if arg else mc.default_cache_dir()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadconv", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run the full pipeline on a wide CSV panel")
    a.add_argument("--input", required=True, help="CSV with a 'year' column and one column per country")
    a.add_argument("--groups", help="JSON file mapping group names to member lists")
    a.add_argument("--mode", choices=MODES, default="joint")
    a.add_argument("--k", type=_floats, default=(0.5, 0.9), help="bandwidth constants, e.g. 0.5,0.9")
    a.add_argument("--max-changes", type=int, default=2)
    a.add_argument("--B", type=int, default=10_000, help="Monte Carlo replications")
    a.add_argument("--seed", type=_seed, default=0)
    a.add_argument("--alpha", type=_floats, default=mc.LEVELS)
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--cv-cache", help=f"critical-value cache directory (default: ${mc.CACHE_ENV})")
    a.add_argument("--jobs", type=int, default=1, help="series analysed in parallel")
    a.add_argument("--min-length", type=int, default=30)

    s = sub.add_parser("simulate-cv", help="simulate and cache critical values")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--test", choices=CV_TESTS, required=True)
    s.add_argument("--B", type=int, default=10_000)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--k", type=float, default=0.9, help="bandwidth constant (kpss)")
    s.add_argument("--window", type=float, default=0.15, help="window fraction (level-u)")
    s.add_argument("--cv-cache", help=f"cache directory (default: ${mc.CACHE_ENV})")
    s.add_argument("--jobs", type=int, default=1)
    return p


def cmd_analyze(args) -> int:
    panel = load_panel(args.input, min_length=args.min_length)
    groups = load_groups(args.groups) if args.groups else ()
    cfg = AnalysisConfig(
        groups=groups,
        mode=args.mode,
        ks=args.k,
        max_changes=args.max_changes,
        replications=args.B,
        seed=args.seed,
        alphas=args.alpha,
        cache_dir=_cache_dir(args.cv_cache),
        jobs=args.jobs,
    )
    report = analyze_panel(panel, cfg)
    for path in write_outputs(report, Path(args.out)):
        log.info("wrote %s", path)
    return 0


def cmd_simulate_cv(args) -> int:
    if args.B < 1000:
        raise ConfigError("B must be at least 1000")
    cache = mc.CvCache(_cache_dir(args.cv_cache))
    if cache.directory is None:
        log.warning("no cache directory given; values are printed but not stored")
    sim = SimConfig(args.B, args.seed, cache, args.jobs)
    T = args.T
    if args.test == "kpss":
        X = build_design(TrendSpec(), T)
        cvs = simulate_critical_values(NullModel(X, args.k, 1.0, args.B, args.seed), cache, args.jobs)
        doc = {"cv": list(cvs)}
    elif args.test == "level-u":
        doc = level_break_critical_values(T, LevelBreakConfig(window=args.window), sim)
    else:
        base = SEQUENTIAL if args.test == "expw-sequential" else ONE_BREAK
        variant = "unrestricted" if args.test == "expw-unrestricted" else "general"
        doc = {"cv": list(expw_critical_values(T, ExpwConfig(base.trimming, base.delta, variant), sim))}
    doc = {"test": args.test, "T": T, "B": args.B, "seed": args.seed, "levels": list(mc.LEVELS),
           "cache_hit": cache.hits > 0, **doc}
    print(json.dumps(doc, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handler = cmd_analyze if args.command == "analyze" else cmd_simulate_cv
    try:
        return handler(args)
    except QuadconvError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
