"""Parsers for the four public data products and real-time vintages.

Sources
-------
- NSIDC Sea Ice Index v3, daily northern-hemisphere extent (CSV)
- PIOMAS daily mean ice thickness (gzipped whitespace table, day-of-year)
- Berkeley Earth Land_and_Ocean_complete.txt (``%``-commented text)
- NOAA GML Mauna Loa monthly CO2 (``#``-commented CSV)

Each parser takes the raw file contents (text, or bytes for the gzip
file) and returns a ``DailySeries`` or ``MonthlySeries``.  Skipped lines
are logged with their line number.
"""

from __future__ import annotations

import datetime as dt
import gzip
import logging
import math
import shutil
import urllib.parse
import urllib.request
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (DayOfYearOutOfRange, EmptyFile, GzipError, MalformedRow,
                     MissingColumn, OutOfCoverage)
from .timeseries import (DailySeries, MonthlySeries, fill_missing_daily,
                         last_complete_month, month_end, month_index,
                         monthly_from_daily, shift_month)

logger = logging.getLogger(__name__)

SOURCES = ("sie", "sit", "at", "co2")

DEFAULT_URLS = {
    "sie": "https://noaadata.apps.nsidc.org/NOAA/G02135/north/daily/data/N_seaice_extent_daily_v3.0.csv",
    "sit": "http://psc.apl.uw.edu/wordpress/wp-content/uploads/schweiger/ice_volume/PIOMAS.thick.daily.1979.2022.Current.v2.1.dat.gz",
    "at": "http://berkeleyearth.lbl.gov/auto/Global/Land_and_Ocean_complete.txt",
    "co2": "https://gml.noaa.gov/webdata/ccgg/trends/co2/co2_mm_mlo.csv",
}


def _is_int(tok: str) -> bool:
    try:
        int(tok)
    except ValueError:
        return False
    return True


def _to_float(tok: str, lineno: int, line: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise MalformedRow(lineno, line, f"not a number: {tok!r}") from None


# =============================================================================
# Parsers
# =============================================================================

def parse_nsidc_sie(text: str) -> DailySeries:
    """Parse the NSIDC daily extent CSV (10^6 km^2).

    Header lines (any line before the first data row whose first field is
    not an integer) are skipped.  A blank or negative extent marks the day
    as missing.
    """
    entries: dict[dt.date, float | None] = {}
    cols = {"year": 0, "month": 1, "day": 2, "extent": 3}
    seen_data = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        if not _is_int(fields[0]):
            if seen_data:
                raise MalformedRow(lineno, line, "non-numeric year")
            names = [f.lower() for f in fields]
            if "year" in names and "extent" in names:
                cols = {k: names.index(k) for k in cols}
            logger.debug("nsidc: skipped header line %d", lineno)
            continue
        seen_data = True
        if len(fields) <= max(cols["year"], cols["month"], cols["day"]):
            raise MalformedRow(lineno, line, "too few columns")
        try:
            date = dt.date(int(fields[cols["year"]]), int(fields[cols["month"]]),
                           int(fields[cols["day"]]))
        except ValueError as exc:
            raise MalformedRow(lineno, line, str(exc)) from None
        raw = fields[cols["extent"]] if cols["extent"] < len(fields) else ""
        value = None
        if raw:
            value = _to_float(raw, lineno, line)
            if value < 0 or not math.isfinite(value):
                value = None
        if value is None:
            logger.info("nsidc: line %d has no extent; %s marked missing", lineno, date)
        if date in entries:
            raise MalformedRow(lineno, line, f"duplicate date {date}")
        entries[date] = value
    if not entries:
        raise EmptyFile("no data rows in NSIDC file")
    return DailySeries.from_mapping("SIE", entries)


def parse_piomas_sit(binary: bytes) -> DailySeries:
    """Parse the gzipped PIOMAS daily thickness table (meters)."""
    try:
        text = gzip.decompress(binary).decode("ascii")
    except (OSError, EOFError, zlib.error, UnicodeDecodeError) as exc:
        raise GzipError(f"cannot decompress PIOMAS file: {exc}") from None
    entries: dict[dt.date, float] = {}
    seen_data = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if not _is_int(fields[0]):
            if seen_data:
                raise MalformedRow(lineno, line, "non-numeric year")
            logger.debug("piomas: skipped header line %d", lineno)
            continue
        seen_data = True
        if len(fields) < 3 or not _is_int(fields[1]):
            raise MalformedRow(lineno, line, "expected year, day-of-year, thickness")
        year, doy = int(fields[0]), int(fields[1])
        ndays = 366 if (year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)) else 365
        if not 1 <= doy <= ndays:
            raise DayOfYearOutOfRange(f"line {lineno}: day {doy} not in 1..{ndays} for {year}")
        date = dt.date(year, 1, 1) + dt.timedelta(days=doy - 1)
        if date in entries:
            raise MalformedRow(lineno, line, f"duplicate date {date}")
        entries[date] = _to_float(fields[2], lineno, line)
    if not entries:
        raise EmptyFile("no data rows in PIOMAS file")
    return DailySeries.from_mapping("SIT", entries)


def parse_berkeley_at(text: str) -> MonthlySeries:
    """Parse Berkeley Earth monthly anomalies (deg C vs 1951-1980).

    The published file carries two tables (air temperature over sea ice,
    then water temperature under it).  Only the first is read: parsing
    stops at the first repeated (year, month) key.
    """
    entries: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        fields = stripped.split()
        if len(fields) < 3 or not (_is_int(fields[0]) and _is_int(fields[1])):
            raise MalformedRow(lineno, line, "expected year, month, anomaly")
        key = (int(fields[0]), int(fields[1]))
        if not 1 <= key[1] <= 12:
            raise MalformedRow(lineno, line, "month out of range")
        if key in entries:
            logger.info("berkeley: repeated key %s at line %d; second table ignored", key, lineno)
            break
        value = _to_float(fields[2], lineno, line)
        if not math.isfinite(value):
            logger.info("berkeley: line %d has no anomaly; skipped", lineno)
            continue
        entries[key] = value
    if not entries:
        raise EmptyFile("no data rows in Berkeley Earth file")
    return MonthlySeries.from_mapping("AT", entries)


def parse_noaa_co2(text: str) -> MonthlySeries:
    """Parse NOAA monthly CO2, reading the ``deseasonalized`` column by name."""
    header = None
    entries: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in stripped.split(",")]
        if header is None:
            header = [f.lower() for f in fields]
            if "deseasonalized" not in header:
                raise MissingColumn("deseasonalized")
            iy = header.index("year") if "year" in header else 0
            im = header.index("month") if "month" in header else 1
            ids = header.index("deseasonalized")
            continue
        if len(fields) != len(header):
            raise MalformedRow(lineno, line, f"expected {len(header)} columns")
        if not (_is_int(fields[iy]) and _is_int(fields[im])):
            raise MalformedRow(lineno, line, "non-integer year/month")
        key = (int(fields[iy]), int(fields[im]))
        value = _to_float(fields[ids], lineno, line)
        if value < 0:
            logger.info("noaa: line %d has sentinel %s; skipped", lineno, fields[ids])
            continue
        if key in entries:
            raise MalformedRow(lineno, line, f"duplicate month {key}")
        entries[key] = value
    if header is None:
        raise EmptyFile("no header in NOAA file")
    if not entries:
        raise EmptyFile("no data rows in NOAA file")
    return MonthlySeries.from_mapping("CO2", entries)


# =============================================================================
# Canonical text format (cache)
# =============================================================================

def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def daily_to_csv(series: DailySeries) -> str:
    lines = [f"# variable={series.variable_id}", "date,value"]
    for i, v in enumerate(series.values):
        lines.append(f"{series.start + dt.timedelta(days=i)},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def monthly_to_csv(series: MonthlySeries) -> str:
    lines = [f"# variable={series.variable_id}", "year,month,value"]
    i0 = month_index(*series.start)
    for i, v in enumerate(series.values):
        y, m = divmod(i0 + i, 12)
        lines.append(f"{y},{m + 1},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def _canonical_rows(text: str):
    variable = None
    for line in text.splitlines():
        if line.startswith("# variable="):
            variable = line.split("=", 1)[1].strip()
        elif line and not line.startswith("#"):
            yield variable, line.split(",")


def daily_from_csv(text: str) -> DailySeries:
    entries, variable = {}, None
    for variable, fields in _canonical_rows(text):
        if fields[0] == "date":
            continue
        entries[dt.date.fromisoformat(fields[0])] = float(fields[1]) if fields[1] else None
    return DailySeries.from_mapping(variable, entries)


def monthly_from_csv(text: str) -> MonthlySeries:
    entries, variable = {}, None
    for variable, fields in _canonical_rows(text):
        if fields[0] == "year":
            continue
        entries[(int(fields[0]), int(fields[1]))] = float(fields[2]) if fields[2] else math.nan
    return MonthlySeries.from_mapping(variable, entries)


# =============================================================================
# Archive and vintages
# =============================================================================

@dataclass(frozen=True, eq=False)
class RawArchive:
    sie_daily: DailySeries
    sit_daily: DailySeries
    at_monthly: MonthlySeries
    co2_monthly: MonthlySeries

    @cached_property
    def sie_filled(self) -> DailySeries:
        return fill_missing_daily(self.sie_daily)

    @cached_property
    def sie_monthly(self) -> MonthlySeries:
        return monthly_from_daily(self.sie_filled, "SIE_M")

    @cached_property
    def sit_monthly(self) -> MonthlySeries:
        return monthly_from_daily(self.sit_daily, "SIT_M")

    @property
    def coverage(self) -> tuple[dt.date, dt.date]:
        return self.sie_daily.start, self.sie_daily.end

    def realized_monthly_sie(self, year: int, month: int) -> float:
        return self.sie_monthly.value_at(year, month)


@dataclass(frozen=True)
class LagConfig:
    """Publication lags in whole months relative to the as-of month."""
    sit: int = 2
    co2: int = 3
    at: int = 4


@dataclass(frozen=True, eq=False)
class VintageSnapshot:
    asof_date: dt.date
    sie_daily: DailySeries
    sie_monthly: MonthlySeries
    sit_daily: DailySeries
    sit_monthly: MonthlySeries
    co2_monthly: MonthlySeries
    at_monthly: MonthlySeries
    visible_through: dict = field(default_factory=dict)


def _truncate_monthly(series: MonthlySeries, last: tuple[int, int]) -> MonthlySeries:
    if month_index(*last) < month_index(*series.start):
        return MonthlySeries(series.variable_id, series.start, [])
    return series.truncate(last)


def vintage_view(archive: RawArchive, asof_date: dt.date, lags: LagConfig | None = None) -> VintageSnapshot:
    """Information set available on ``asof_date``.

    SIE daily is visible through the as-of day inclusive.  Gap filling is
    redone on the visible data only, so a missing as-of-day value stays
    missing rather than borrowing tomorrow's observation.
    """
    lags = lags or LagConfig()
    first, last = archive.coverage
    if not first <= asof_date <= last:
        raise OutOfCoverage(f"{asof_date} outside SIE coverage {first}..{last}")

    k = archive.sie_daily.offset(asof_date) + 1
    filled = np.array(archive.sie_filled.values[:k])
    filled[-1] = archive.sie_daily.values[k - 1]
    sie_daily = archive.sie_daily.replace_values(filled)

    lcm = last_complete_month(asof_date)
    sie_monthly = _truncate_monthly(archive.sie_monthly, lcm)
    if month_end(*lcm) == asof_date and len(sie_monthly):
        vals = np.array(sie_monthly.values)
        window = sie_daily.window(dt.date(lcm[0], lcm[1], 1), asof_date)
        vals[-1] = np.nan if np.isnan(window).any() else window.mean()
        sie_monthly = MonthlySeries("SIE_M", sie_monthly.start, vals)

    cur = (asof_date.year, asof_date.month)
    sit_through = shift_month(*cur, -lags.sit)
    co2_through = shift_month(*cur, -lags.co2)
    at_through = shift_month(*cur, -lags.at)
    sit_daily = archive.sit_daily.truncate(min(month_end(*sit_through), archive.sit_daily.end))
    return VintageSnapshot(
        asof_date=asof_date,
        sie_daily=sie_daily,
        sie_monthly=sie_monthly,
        sit_daily=sit_daily,
        sit_monthly=_truncate_monthly(archive.sit_monthly, sit_through),
        co2_monthly=_truncate_monthly(archive.co2_monthly, co2_through),
        at_monthly=_truncate_monthly(archive.at_monthly, at_through),
        visible_through={"SIE": asof_date, "SIE_M": lcm, "SIT": sit_through,
                         "SIT_M": sit_through, "CO2": co2_through, "AT": at_through},
    )


# =============================================================================
# File access
# =============================================================================

def fetch_source(location: str, raw_dir: Path, name: str) -> Path:
    """Copy a local path or download a URL verbatim into ``raw_dir``."""
    raw_dir.mkdir(parents=True, exist_ok=True)
    target = raw_dir / name
    scheme = urllib.parse.urlparse(location).scheme
    if scheme in ("http", "https", "ftp", "file"):
        logger.info("fetching %s", location)
        with urllib.request.urlopen(location, timeout=60) as resp, open(target, "wb") as fh:
            shutil.copyfileobj(resp, fh)
    else:
        shutil.copyfile(location, target)
    return target


def parse_source(kind: str, data: bytes):
    if kind == "sit":
        return parse_piomas_sit(data)
    text = data.decode("utf-8", errors="replace")
    return {"sie": parse_nsidc_sie, "at": parse_berkeley_at, "co2": parse_noaa_co2}[kind](text)


def load_raw_archive(paths: dict) -> RawArchive:
    """Parse the four raw files named by ``paths`` (keys sie, sit, at, co2)."""
    parsed = {k: parse_source(k, Path(paths[k]).read_bytes()) for k in SOURCES}
    return RawArchive(parsed["sie"], parsed["sit"], parsed["at"], parsed["co2"])


CACHE_FILES = {"sie": "sie_daily.csv", "sit": "sit_daily.csv",
               "at": "at_monthly.csv", "co2": "co2_monthly.csv"}


def save_archive(archive: RawArchive, directory: Path) -> dict:
    """Write the canonical cache; returns {source: filename}."""
    directory.mkdir(parents=True, exist_ok=True)
    texts = {"sie": daily_to_csv(archive.sie_daily), "sit": daily_to_csv(archive.sit_daily),
             "at": monthly_to_csv(archive.at_monthly), "co2": monthly_to_csv(archive.co2_monthly)}
    for k, text in texts.items():
        (directory / CACHE_FILES[k]).write_text(text)
    return dict(CACHE_FILES)


def load_archive(directory: Path) -> RawArchive:
    """Read an archive written by :func:`save_archive`."""
    d = Path(directory)
    return RawArchive(
        daily_from_csv((d / CACHE_FILES["sie"]).read_text()),
        daily_from_csv((d / CACHE_FILES["sit"]).read_text()),
        monthly_from_csv((d / CACHE_FILES["at"]).read_text()),
        monthly_from_csv((d / CACHE_FILES["co2"]).read_text()),
    )
