"""Synthetic stand-ins for the four raw data products.

The generator writes files in the exact on-disk formats of the NSIDC,
PIOMAS, Berkeley Earth and NOAA products so the whole pipeline (parsing,
vintages, features, models, evaluation) can run offline.  The dynamics
are loosely calibrated to the observed record: a seasonal cycle with a
mid-March maximum and mid-September minimum, a season-dependent downward
trend, persistent anomalies, and extra summer melt when spring ice is
anomalously thin.

None of the numbers produced here are observations.
"""

from __future__ import annotations

import datetime as dt
import gzip
import io
from pathlib import Path

import numpy as np

from .ingest import RawArchive, parse_berkeley_at, parse_noaa_co2, parse_nsidc_sie, parse_piomas_sit
from .timeseries import DailySeries, MonthlySeries

SIE_START = dt.date(1978, 10, 26)
SIT_START = dt.date(1979, 1, 1)
END = dt.date(2021, 12, 31)
EVERY_OTHER_DAY_UNTIL = dt.date(1986, 8, 1)

FILENAMES = {
    "sie": "N_seaice_extent_daily_v3.0.csv",
    "sit": "PIOMAS.thick.daily.1979.2021.Current.v2.1.dat.gz",
    "at": "Land_and_Ocean_complete.txt",
    "co2": "co2_mm_mlo.csv",
}


def _phase(doy, peak):
    return 2 * np.pi * (doy - peak) / 365.25


def _simulate(seed: int):
    rng = np.random.default_rng(seed)
    n = (END - SIE_START).days + 1
    dates = [SIE_START + dt.timedelta(days=i) for i in range(n)]
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=float)
    years = np.array([d.year + (d.timetuple().tm_yday - 1) / 365.25 for d in dates]) - 1979.0

    # seasonal cycle: max ~15.6 mid-March, min ~7 mid-September
    clim = 11.3 + 4.1 * np.cos(_phase(doy, 72)) + 0.55 * np.cos(2 * _phase(doy, 30))
    slope = -0.030 - 0.050 * (1 - np.cos(_phase(doy, 72))) / 2
    sit_clim = 1.75 + 0.55 * np.cos(_phase(doy, 125))
    sit_slope = -0.022

    slow = fast = melt = 0.0
    h = 0.0
    h_may = 0.0
    sie = np.empty(n)
    sit = np.empty(n)
    for i in range(n):
        e_common = rng.standard_normal()
        slow = 0.995 * slow + 0.018 * (0.6 * e_common + 0.8 * rng.standard_normal())
        fast = 0.90 * fast + 0.045 * rng.standard_normal()
        h = 0.998 * h + 0.011 * (0.6 * e_common + 0.8 * rng.standard_normal())
        d = doy[i]
        if d == 151:
            h_may = h
        if 152 <= d <= 275:
            # thin spring ice melts out faster; thick ice slows late summer loss
            melt += -0.012 * max(-0.10 - h_may, 0.0) / 0.1 * 0.25
            melt += 0.006 * max(h_may - 0.12, 0.0) / 0.1 * 0.25
        else:
            melt *= 0.985
        sie[i] = clim[i] + slope[i] * years[i] + slow + fast + melt
        sit[i] = sit_clim[i] + sit_slope * years[i] + h
    sie += 0.012 * rng.standard_normal(n)
    return dates, sie, np.maximum(sit, 0.05), rng


def _monthly_at(rng, first_year=1850, last=(2021, 12)):
    rows = []
    a = 0.0
    for y in range(first_year, last[0] + 1):
        for m in range(1, 13):
            if (y, m) > last:
                break
            a = 0.6 * a + 0.09 * rng.standard_normal()
            base = -0.35 + 0.004 * max(y - 1900, 0) + 0.014 * max(y - 1975, 0)
            rows.append((y, m, base + a))
    return rows


def _monthly_co2(rng, first=(1958, 3), last=(2022, 2)):
    rows = []
    y, m = first
    while (y, m) <= last:
        t = y + (m - 0.5) / 12 - 1958.0
        deseason = 314.8 + 0.75 * t + 0.0125 * t * t + 0.08 * rng.standard_normal()
        seas = 3.0 * np.sin(2 * np.pi * (m - 2.5) / 12)
        rows.append((y, m, y + (m - 0.5) / 12, deseason + seas, deseason))
        m += 1
        if m == 13:
            y, m = y + 1, 1
    return rows


def render_sources(seed: int = 20220601) -> dict[str, bytes]:
    """Raw file contents keyed by source name (sie, sit, at, co2)."""
    dates, sie, sit, rng = _simulate(seed)

    out = io.StringIO()
    out.write("Year, Month, Day,     Extent,    Missing, Source Data\n")
    out.write(" YYYY,    MM,  DD, 10^6 sq km, 10^6 sq km, Source data product web sites\n")
    for d, v in zip(dates, sie):
        if d < EVERY_OTHER_DAY_UNTIL and d.day % 2 == 0:
            continue
        out.write(f"{d.year:5d}, {d.month:5d}, {d.day:5d}, {v:10.3f}, {0.0:10.3f}, "
                  f"['synthetic']\n")
    sie_bytes = out.getvalue().encode()

    out = io.StringIO()
    out.write("Year  #day  Thickness\n")
    for d, v in zip(dates, sit):
        if d < SIT_START:
            continue
        out.write(f"{d.year:5d} {d.timetuple().tm_yday:5d} {v:8.4f}\n")
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
        gz.write(out.getvalue().encode())
    sit_bytes = buf.getvalue()

    at_rows = _monthly_at(rng)
    out = io.StringIO()
    out.write("% Synthetic land and ocean temperature anomalies\n%\n")
    out.write("% Estimated Jan 1951-Dec 1980 global mean temperature (C)\n%\n")
    out.write("% Year, Month,  Anomaly, Unc.,   Anomaly, Unc.,   Anomaly, Unc.\n%\n")
    for table in range(2):
        if table:
            out.write("%\n% Global Average Temperature Anomaly with Sea Ice "
                      "Temperature Inferred from Water Temperatures\n%\n")
        for y, m, v in at_rows:
            v2 = v - 0.02 * table
            out.write(f"  {y:4d}  {m:4d}  {v2:7.3f}  {0.05:6.3f}     NaN    NaN\n")
        out.write(f"  {at_rows[-1][0] + 1:4d}     1      NaN     NaN     NaN    NaN\n")
    at_bytes = out.getvalue().encode()

    out = io.StringIO()
    out.write("# --------------------------------------------------------------------\n")
    out.write("# Synthetic monthly mean CO2 (deseasonalized column as published)\n")
    out.write("# --------------------------------------------------------------------\n")
    out.write("year,month,decimal date,average,deseasonalized,ndays,sdev,unc\n")
    for y, m, dec, avg, des in _monthly_co2(rng):
        out.write(f"{y},{m},{dec:.4f},{avg:.2f},{des:.2f},-1,-9.99,-0.99\n")
    co2_bytes = out.getvalue().encode()

    return {"sie": sie_bytes, "sit": sit_bytes, "at": at_bytes, "co2": co2_bytes}


def write_sources(directory, seed: int = 20220601) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for kind, data in render_sources(seed).items():
        paths[kind] = directory / FILENAMES[kind]
        paths[kind].write_bytes(data)
    return paths


def synthetic_archive(seed: int = 20220601) -> RawArchive:
    raw = render_sources(seed)
    return RawArchive(parse_nsidc_sie(raw["sie"].decode()), parse_piomas_sit(raw["sit"]),
                      parse_berkeley_at(raw["at"].decode()), parse_noaa_co2(raw["co2"].decode()))


def constant_archive(sie=10.0, sit=1.5, co2=400.0, at=0.5,
                     start=dt.date(1977, 1, 1), end=dt.date(2021, 12, 31)) -> RawArchive:
    """Archive whose every observation equals a per-variable constant."""
    n = (end - start).days + 1
    months = (end.year - start.year) * 12 + end.month - start.month + 1
    return RawArchive(
        DailySeries("SIE", start, np.full(n, float(sie))),
        DailySeries("SIT", start, np.full(n, float(sit))),
        MonthlySeries("AT", (start.year, start.month), np.full(months, float(at))),
        MonthlySeries("CO2", (start.year, start.month), np.full(months, float(co2))),
    )
