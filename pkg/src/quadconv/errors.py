"""Exception hierarchy.

Errors are grouped by the CLI exit code they map to: configuration (2),
data (3) and numerical failures (4).
"""

from __future__ import annotations


class QuadconvError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(QuadconvError):
    exit_code = 2


class DataError(QuadconvError):
    exit_code = 3


class NumericError(QuadconvError):
    exit_code = 4


class MissingValue(DataError):
    def __init__(self, year: int, country: str) -> None:
        super().__init__(f"missing value for {country!r} in {year}")
        self.year = year
        self.country = country


class NonPositiveValue(DataError):
    pass


class NonConsecutiveYears(DataError):
    pass


class TooShort(DataError):
    pass


class CountryNotInGroup(DataError):
    pass


class OutOfRange(DataError):
    pass


class RankDeficient(NumericError):
    pass


class NoAdmissibleDates(NumericError):
    pass


class WindowTooSmall(NumericError):
    pass


class SubsampleTooShort(NumericError):
    pass


class EmptyRegime(NumericError):
    pass
