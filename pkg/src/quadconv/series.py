"""Panel loading, relative series construction and year/index mapping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    CountryNotInGroup,
    DataError,
    MissingValue,
    NonConsecutiveYears,
    NonPositiveValue,
    OutOfRange,
    TooShort,
)

MIN_LENGTH = 30


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Annual observations starting at ``first_year``."""

    first_year: int
    values: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        arr = _frozen(self.values)
        if arr.ndim != 1:
            raise DataError("time series values must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"series {self.name!r} contains non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.first_year, self.first_year + len(self))

    def year_of_index(self, idx: int) -> int:
        return year_of_index(self, idx)

    def index_of_year(self, year: int) -> int:
        return index_of_year(self, year)

    def slice(self, start: int, stop: int) -> "TimeSeries":
        """Zero-based half-open slice, keeping the calendar alignment."""
        return TimeSeries(self.first_year + start, self.values[start:stop], self.name)


@dataclass(frozen=True)
class Panel:
    """Per-capita values, one column per country (T x C)."""

    first_year: int
    countries: tuple[str, ...]
    values: np.ndarray
    min_length: int = MIN_LENGTH

    def __post_init__(self) -> None:
        arr = _frozen(self.values)
        countries = tuple(self.countries)
        if arr.ndim != 2 or arr.shape[1] != len(countries):
            raise DataError("panel values must be T x C with one column per country")
        if len(set(countries)) != len(countries):
            raise DataError("duplicate country identifiers")
        if arr.shape[0] < self.min_length:
            raise TooShort(f"panel has {arr.shape[0]} years, need at least {self.min_length}")
        if not np.all(np.isfinite(arr)):
            raise DataError("panel contains non-finite values")
        bad = np.argwhere(arr <= 0)
        if bad.size:
            t, c = bad[0]
            raise NonPositiveValue(
                f"non-positive value {arr[t, c]!r} for {countries[c]!r} in {self.first_year + t}"
            )
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "countries", countries)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def column(self, country: str) -> np.ndarray:
        try:
            return self.values[:, self.countries.index(country)]
        except ValueError:
            raise DataError(f"unknown country {country!r}") from None

    def log_series(self, country: str) -> TimeSeries:
        return TimeSeries(self.first_year, np.log(self.column(country)), country)


@dataclass(frozen=True)
class GroupConfig:
    name: str
    members: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ConfigError(f"group {self.name!r} has no members")

    def validate(self, panel: Panel) -> None:
        missing = [c for c in self.members if c not in panel.countries]
        if missing:
            raise ConfigError(f"group {self.name!r} references unknown countries: {missing}")


def load_panel(path: str | Path, min_length: int = MIN_LENGTH) -> Panel:
    """Read a wide CSV: ``year,<c1>,<c2>,...`` with one row per consecutive year."""
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if header[0].lower() != "year" or len(header) < 2:
        raise DataError("first header column must be 'year' followed by country names")
    countries = header[1:]

    years: list[int] = []
    values: list[list[float]] = []
    for row in rows[1:]:
        if len(row) != len(header):
            raise DataError(f"row {row[:1]} has {len(row)} fields, expected {len(header)}")
        try:
            year = int(row[0].strip())
        except ValueError:
            raise DataError(f"bad year {row[0]!r}") from None
        parsed = []
        for country, cell in zip(countries, row[1:]):
            cell = cell.strip()
            if cell == "" or cell.lower() in {"na", "nan"}:
                raise MissingValue(year, country)
            try:
                parsed.append(float(cell))
            except ValueError:
                # a non-numeric column means long format or a mislabeled file
                raise DataError(
                    f"non-numeric value {cell!r} for {country!r} in {year}; "
                    "only wide format is supported"
                ) from None
        years.append(year)
        values.append(parsed)

    if not years:
        raise DataError(f"{path} has a header but no data rows")
    diffs = np.diff(years)
    if np.any(diffs != 1):
        pos = int(np.argmax(diffs != 1))
        raise NonConsecutiveYears(f"years jump from {years[pos]} to {years[pos + 1]}")
    return Panel(years[0], tuple(countries), np.array(values), min_length=min_length)


def group_mean(panel: Panel, group: GroupConfig) -> np.ndarray:
    """Arithmetic mean of per-capita levels across the group, per year."""
    group.validate(panel)
    cols = [panel.countries.index(c) for c in group.members]
    return panel.values[:, cols].mean(axis=1)


def relative_series(panel: Panel, group: GroupConfig, country: str) -> TimeSeries:
    """log(x_country / mean over group members of x), year by year."""
    if country not in group.members:
        raise CountryNotInGroup(f"{country!r} is not a member of group {group.name!r}")
    ratio = panel.column(country) / group_mean(panel, group)
    return TimeSeries(panel.first_year, np.log(ratio), country)


def group_mean_log_series(panel: Panel, group: GroupConfig) -> TimeSeries:
    return TimeSeries(panel.first_year, np.log(group_mean(panel, group)), f"Mean {group.name}")


def year_of_index(series: TimeSeries, idx: int) -> int:
    """Calendar year of the 1-based sample index ``idx``."""
    if not 1 <= idx <= len(series):
        raise OutOfRange(f"index {idx} outside 1..{len(series)}")
    return series.first_year + idx - 1


def index_of_year(series: TimeSeries, year: int) -> int:
    idx = year - series.first_year + 1
    if not 1 <= idx <= len(series):
        raise OutOfRange(f"year {year} outside {series.first_year}..{series.first_year + len(series) - 1}")
    return idx


def break_index(fraction: float, T: int) -> int:
    """Number of observations before a change at relative position ``fraction``.

    Uses the integer part, so ``t > break_index`` are the post-change samples.
    """
    return int(math.floor(fraction * T + 1e-9))


def change_year(first_year: int, fraction: float, T: int) -> int:
    """Calendar year of the first sample after the change point."""
    return first_year + break_index(fraction, T)


def check_length(series: TimeSeries, minimum: int = MIN_LENGTH) -> None:
    if len(series) < minimum:
        raise TooShort(f"series {series.name!r} has {len(series)} observations, need {minimum}")


def as_array(y: TimeSeries | Sequence[float] | np.ndarray) -> np.ndarray:
    if isinstance(y, TimeSeries):
        return y.values
    return np.asarray(y, dtype=float)
