"""Calendar-indexed daily and monthly series.

Both containers store values on a contiguous calendar grid (one slot per
day, or per month) and mark missing observations with NaN.  Ordering and
uniqueness of keys therefore hold by construction.
"""

from __future__ import annotations

import calendar
import datetime as dt
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import IncompleteMonth, IncompleteWindow

DAILY_VARIABLES = ("SIE", "SIT")
MONTHLY_VARIABLES = ("SIE_M", "SIT_M", "CO2", "AT")


def month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def from_month_index(idx: int) -> tuple[int, int]:
    return idx // 12, idx % 12 + 1


def month_length(year: int, month: int) -> int:
    return calendar.monthrange(year, month)[1]


def month_end(year: int, month: int) -> dt.date:
    return dt.date(year, month, month_length(year, month))


def shift_month(year: int, month: int, delta: int) -> tuple[int, int]:
    return from_month_index(month_index(year, month) + delta)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DailySeries:
    """Daily observations on a contiguous grid starting at ``start``.

    ``values[i]`` is the observation for ``start + i`` days; NaN marks a
    missing day.
    """

    variable_id: str
    start: dt.date
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if np.isinf(vals).any():
            raise ValueError("values must be finite or NaN")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_mapping(cls, variable_id: str, entries: Mapping[dt.date, float | None]) -> "DailySeries":
        if not entries:
            raise ValueError("empty series")
        dates = sorted(entries)
        start = dates[0]
        values = np.full((dates[-1] - start).days + 1, np.nan)
        for d in dates:
            v = entries[d]
            values[(d - start).days] = np.nan if v is None else v
        return cls(variable_id, start, values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DailySeries):
            return NotImplemented
        return (self.variable_id == other.variable_id and self.start == other.start
                and np.array_equal(self.values, other.values, equal_nan=True))

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self.values) - 1)

    def offset(self, date: dt.date) -> int:
        return (date - self.start).days

    def value_at(self, date: dt.date) -> float:
        """Value on ``date``; NaN if missing or outside coverage."""
        i = self.offset(date)
        if 0 <= i < len(self.values):
            return float(self.values[i])
        return float("nan")

    def window(self, first: dt.date, last: dt.date) -> np.ndarray:
        """Values for ``first..last`` inclusive, NaN-padded outside coverage."""
        i0, i1 = self.offset(first), self.offset(last) + 1
        out = np.full(i1 - i0, np.nan)
        lo, hi = max(i0, 0), min(i1, len(self.values))
        if lo < hi:
            out[lo - i0:hi - i0] = self.values[lo:hi]
        return out

    def truncate(self, last: dt.date) -> "DailySeries":
        """Observations dated on or before ``last``."""
        n = self.offset(last) + 1
        return DailySeries(self.variable_id, self.start, self.values[:max(n, 0)])

    def replace_values(self, values) -> "DailySeries":
        return DailySeries(self.variable_id, self.start, values)

    def items(self) -> Iterator[tuple[dt.date, float]]:
        """(date, value) pairs for present observations only."""
        for i in np.flatnonzero(~np.isnan(self.values)):
            yield self.start + dt.timedelta(days=int(i)), float(self.values[i])

    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(len(self.values))]


@dataclass(frozen=True, eq=False)
class MonthlySeries:
    """Monthly observations on a contiguous grid starting at ``start``.

    A NaN slot means the month is absent (never observed, or could not be
    aggregated from incomplete daily data).
    """

    variable_id: str
    start: tuple[int, int]
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if np.isinf(vals).any():
            raise ValueError("values must be finite or NaN")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))

    @classmethod
    def from_mapping(cls, variable_id: str, entries: Mapping[tuple[int, int], float]) -> "MonthlySeries":
        if not entries:
            raise ValueError("empty series")
        keys = sorted(entries)
        i0 = month_index(*keys[0])
        values = np.full(month_index(*keys[-1]) - i0 + 1, np.nan)
        for k in keys:
            values[month_index(*k) - i0] = entries[k]
        return cls(variable_id, keys[0], values)

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MonthlySeries):
            return NotImplemented
        return (self.variable_id == other.variable_id and self.start == other.start
                and np.array_equal(self.values, other.values, equal_nan=True))

    @property
    def end(self) -> tuple[int, int]:
        return from_month_index(month_index(*self.start) + len(self.values) - 1)

    def value_at(self, year: int, month: int) -> float:
        i = month_index(year, month) - month_index(*self.start)
        if 0 <= i < len(self.values):
            return float(self.values[i])
        return float("nan")

    def window(self, first: tuple[int, int], last: tuple[int, int]) -> np.ndarray:
        i0 = month_index(*first) - month_index(*self.start)
        i1 = month_index(*last) - month_index(*self.start) + 1
        out = np.full(max(i1 - i0, 0), np.nan)
        lo, hi = max(i0, 0), min(i1, len(self.values))
        if lo < hi:
            out[lo - i0:hi - i0] = self.values[lo:hi]
        return out

    def truncate(self, last: tuple[int, int]) -> "MonthlySeries":
        n = month_index(*last) - month_index(*self.start) + 1
        return MonthlySeries(self.variable_id, self.start, self.values[:max(n, 0)])

    def items(self) -> Iterator[tuple[tuple[int, int], float]]:
        i0 = month_index(*self.start)
        for i in np.flatnonzero(~np.isnan(self.values)):
            yield from_month_index(i0 + int(i)), float(self.values[i])


def fill_missing_daily(series: DailySeries) -> DailySeries:
    """Fill isolated one-day gaps with the mean of the two adjacent days.

    Longer runs of missing days and gaps at either end stay missing.
    """
    v = series.values
    if len(v) < 3:
        return series
    out = v.copy()
    gap = np.isnan(v[1:-1]) & ~np.isnan(v[:-2]) & ~np.isnan(v[2:])
    idx = np.flatnonzero(gap) + 1
    out[idx] = (v[idx - 1] + v[idx + 1]) / 2.0
    return series.replace_values(out)


def trailing_mean(series: DailySeries, end_date: dt.date, window_days: int) -> float:
    """Mean over the ``window_days`` calendar days ending on ``end_date``."""
    if window_days < 1:
        raise ValueError("window_days must be positive")
    first = end_date - dt.timedelta(days=window_days - 1)
    vals = series.window(first, end_date)
    if np.isnan(vals).any():
        raise IncompleteWindow(
            f"{series.variable_id}: missing data in {first}..{end_date}")
    return float(vals.mean())


def monthly_average(series: DailySeries, year: int, month: int) -> float:
    vals = series.window(dt.date(year, month, 1), month_end(year, month))
    if np.isnan(vals).any():
        raise IncompleteMonth(f"{series.variable_id}: {year}-{month:02d} has missing days")
    return float(vals.mean())


def monthly_from_daily(series: DailySeries, variable_id: str) -> MonthlySeries:
    """Aggregate every covered month; incomplete months become NaN."""
    first = (series.start.year, series.start.month)
    last = (series.end.year, series.end.month)
    i0, i1 = month_index(*first), month_index(*last)
    out = np.full(i1 - i0 + 1, np.nan)
    for k in range(i0, i1 + 1):
        y, m = from_month_index(k)
        vals = series.window(dt.date(y, m, 1), month_end(y, m))
        if not np.isnan(vals).any():
            out[k - i0] = vals.mean()
    return MonthlySeries(variable_id, first, out)


def last_complete_month(asof_date: dt.date) -> tuple[int, int]:
    """Most recent calendar month whose last day is on or before ``asof_date``.

    On the last day of a month that month itself counts as complete: the
    as-of day's observation is already in hand.
    """
    if asof_date == month_end(asof_date.year, asof_date.month):
        return asof_date.year, asof_date.month
    return shift_month(asof_date.year, asof_date.month, -1)
