"""Glide charts, fraction-best summaries and annual forecast histories.

A glide chart is RMSFE as a function of days remaining to the end of a
fixed target month.  Three protocols are supported:

``InSample``
    full-sample residuals of a linear model fit on every year;
``OutOfBag``
    out-of-bag error of a forest fit on every year;
``RecursiveOOS``
    for each test year, fit on all earlier years and forecast that year.

Every (model, month, horizon, year) evaluation is an independent cell.
Forest cells draw their seed from ``cell_seed`` so any cell can be rerun
on its own and reproduce the value it had inside a larger run.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import (EmptyErrors, IncompleteWindow, MismatchedHorizons, SeaglideError)
from .features import (N_PCS, ModelSpec, asof_for, assemble, build_training_set, collect_rows,
                       model_spec)
from .ingest import LagConfig, RawArchive
from .linear import forecast_linear, ols_fit
from .mrf import MrfParams, fit_forest, oob_rmsfe, predict
from .timeseries import month_end

logger = logging.getLogger(__name__)

PROTOCOLS = ("InSample", "OutOfBag", "RecursiveOOS")
DEFAULT_HORIZONS = tuple(range(120, -1, -1))
INSAMPLE_YEARS = tuple(range(1979, 2021))
TEST_YEARS = tuple(range(2012, 2022))
FIRST_YEAR = 1979
COMPARISON_MODELS = ("FELR", "PocketFELR", "FEML", "PocketFEML")
FOREST_FAMILY = ("FEML", "PocketFEML")

GLIDE_FIELDS = ("model", "month", "protocol", "horizon_days", "rmsfe")
HISTORY_FIELDS = ("model", "month", "year", "asof_date", "forecast", "realized", "error")


@dataclass(frozen=True)
class EvalOptions:
    """Knobs shared by every evaluation cell."""
    mrf: MrfParams = field(default_factory=MrfParams)
    lags: LagConfig = field(default_factory=LagConfig)
    n_pcs: int = N_PCS
    seed: int = 0
    first_year: int = FIRST_YEAR
    n_jobs: int = 1


@dataclass(frozen=True, eq=False)
class GlideCurve:
    """RMSFE per horizon for one model and target month.

    ``gaps`` maps a horizon to the reason it could not be evaluated; its
    ``rmsfe`` entry is NaN.
    """
    model_id: str
    target_month: int
    horizons: tuple[int, ...]
    rmsfe: np.ndarray
    protocol: str
    gaps: dict = field(default_factory=dict)

    def __post_init__(self):
        h = tuple(int(x) for x in self.horizons)
        r = np.asarray(self.rmsfe, dtype=float)
        if len(h) != len(r):
            raise ValueError("horizons and rmsfe differ in length")
        if any(a <= b for a, b in zip(h, h[1:])):
            raise ValueError("horizons must be strictly decreasing")
        if (r[~np.isnan(r)] < 0).any():
            raise ValueError("rmsfe must be non-negative")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        r.flags.writeable = False
        object.__setattr__(self, "horizons", h)
        object.__setattr__(self, "rmsfe", r)

    def at(self, horizon: int) -> float:
        return float(self.rmsfe[self.horizons.index(horizon)])


@dataclass(frozen=True)
class ForecastRecord:
    model_id: str
    target_month: int
    year: int
    asof_date: dt.date
    forecast: float
    realized: float
    error: float

    def __post_init__(self):
        if not (math.isnan(self.realized) and math.isnan(self.error)) \
                and self.error != self.realized - self.forecast:
            raise ValueError("error must equal realized - forecast")

    @classmethod
    def make(cls, model_id, target_month, year, asof_date, forecast, realized) -> "ForecastRecord":
        return cls(model_id, target_month, year, asof_date, float(forecast), float(realized),
                   float(realized) - float(forecast))


def rmsfe(errors) -> float:
    """Root mean squared forecast error, ``sqrt(e'e / T)``."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise EmptyErrors("no forecast errors to summarize")
    return float(np.sqrt(np.mean(e * e)))


def cell_seed(seed: int, model_id: str, target_month: int, horizon: int, year: int) -> int:
    """Forest seed for one evaluation cell (``year=0`` for in-sample fits)."""
    ss = np.random.SeedSequence([seed, zlib.crc32(model_id.encode()), target_month, horizon, year])
    return int(ss.generate_state(1)[0])


def _as_spec(spec) -> ModelSpec:
    return spec if isinstance(spec, ModelSpec) else model_spec(spec)


# =============================================================================
# In-sample
# =============================================================================

def insample_value(spec, archive: RawArchive, target_month: int, horizon: int,
                   years: Sequence[int] = INSAMPLE_YEARS, opts: EvalOptions | None = None) -> float:
    """Residual RMSFE (linear models) or OOB RMSFE (forests) at one horizon."""
    spec = _as_spec(spec)
    opts = opts or EvalOptions()
    ds = build_training_set(archive, spec, target_month, horizon, years, opts.lags, opts.n_pcs)
    if not spec.forest:
        return rmsfe(ols_fit(ds.X, ds.y).residuals)
    params = replace(opts.mrf, seed=cell_seed(opts.seed, spec.kind, target_month, horizon, 0))
    return oob_rmsfe(fit_forest(ds, params, n_jobs=opts.n_jobs), ds)


def insample_glide(spec, archive: RawArchive, target_month: int,
                   horizons: Sequence[int] = DEFAULT_HORIZONS,
                   years: Sequence[int] = INSAMPLE_YEARS,
                   opts: EvalOptions | None = None) -> GlideCurve:
    spec = _as_spec(spec)
    values, gaps = [], {}
    for h in horizons:
        try:
            values.append(insample_value(spec, archive, target_month, h, years, opts))
        except SeaglideError as exc:
            logger.warning("%s m=%d h=%d: %s", spec.kind, target_month, h, exc)
            gaps[h] = f"{type(exc).__name__}: {exc}"
            values.append(np.nan)
    protocol = "OutOfBag" if spec.forest else "InSample"
    return GlideCurve(spec.kind, target_month, tuple(horizons), np.array(values), protocol, gaps)


# =============================================================================
# Recursive out-of-sample
# =============================================================================

def oos_forecast(spec, archive: RawArchive, target_month: int, horizon: int, year: int,
                 opts: EvalOptions | None = None) -> ForecastRecord:
    """Fit on years ``first_year .. year-1`` and forecast ``year``.

    The realized value is attached when the archive has it (NaN otherwise).
    """
    spec = _as_spec(spec)
    opts = opts or EvalOptions()
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    train_years = list(range(opts.first_year, year))
    rows = collect_rows(archive, spec, target_month, horizon, train_years, opts.lags)
    rows.update(collect_rows(archive, spec, target_month, horizon, [year], opts.lags,
                             need_label=False))
    design = assemble(spec, target_month, horizon, rows, train_years, [year], opts.n_pcs)
    x_new, s_new = design.new_rows[year]
    if spec.forest:
        params = replace(opts.mrf, seed=cell_seed(opts.seed, spec.kind, target_month, horizon, year))
        forecast = predict(fit_forest(design.train, params, n_jobs=opts.n_jobs), x_new, s_new)
    else:
        forecast = forecast_linear(spec, design.train, x_new)
    realized = archive.realized_monthly_sie(year, target_month)
    return ForecastRecord.make(spec.kind, target_month, year,
                               asof_for(year, target_month, horizon), forecast, realized)


def oos_glide(specs: Iterable, archive: RawArchive, target_month: int,
              test_years: Sequence[int] = TEST_YEARS,
              horizons: Sequence[int] = DEFAULT_HORIZONS,
              opts: EvalOptions | None = None) -> list[GlideCurve]:
    """Recursive expanding-window glide curves, one per model.

    RMSFE at a horizon is the root of the mean squared error over the test
    years; a horizon where any test year fails is recorded as a gap.
    """
    curves = []
    for spec in map(_as_spec, specs):
        values, gaps = [], {}
        for h in horizons:
            try:
                errs = []
                for year in test_years:
                    rec = oos_forecast(spec, archive, target_month, h, year, opts)
                    if math.isnan(rec.realized):
                        raise IncompleteWindow(f"no realized value for {year}-{target_month:02d}")
                    errs.append(rec.error)
                values.append(rmsfe(errs))
            except SeaglideError as exc:
                logger.warning("%s m=%d h=%d: %s", spec.kind, target_month, h, exc)
                gaps[h] = f"{type(exc).__name__}: {exc}"
                values.append(np.nan)
        curves.append(GlideCurve(spec.kind, target_month, tuple(horizons), np.array(values),
                                 "RecursiveOOS", gaps))
    return curves


def horizon_for(year: int, target_month: int, asof_month: int, asof_day: int) -> int:
    h = (month_end(year, target_month) - dt.date(year, asof_month, asof_day)).days
    if h < 0:
        raise ValueError(f"{asof_month:02d}-{asof_day:02d} falls after the end of month {target_month}")
    return h


def forecast_history(spec, archive: RawArchive, target_month: int, asof_day: tuple[int, int],
                     test_years: Sequence[int] = TEST_YEARS,
                     opts: EvalOptions | None = None) -> list[ForecastRecord]:
    """One recursive out-of-sample forecast per test year made on the
    calendar day ``asof_day = (month, day)`` of the target year."""
    return [oos_forecast(spec, archive, target_month,
                         horizon_for(year, target_month, *asof_day), year, opts)
            for year in test_years]


# =============================================================================
# Fraction best
# =============================================================================

def _check_horizons(curves: Sequence[GlideCurve]) -> tuple[int, ...]:
    if not curves:
        raise ValueError("no curves")
    h = curves[0].horizons
    for c in curves[1:]:
        if c.horizons != h:
            raise MismatchedHorizons(f"{c.model_id} horizons differ from {curves[0].model_id}")
    return h


def _winners(curves: Sequence[GlideCurve]) -> np.ndarray:
    """Boolean (model, horizon) matrix of who attains the per-horizon minimum."""
    R = np.vstack([np.where(np.isnan(c.rmsfe), np.inf, c.rmsfe) for c in curves])
    best = R.min(axis=0)
    return (R == best) & np.isfinite(best)


def fraction_best(curves: Sequence[GlideCurve], subset: Sequence[str] | None = None) -> dict[str, float]:
    """Fraction of horizons at which each model attains the lowest RMSFE.

    The minimum is taken over all ``curves``; tied models all score.  Gaps
    never win.
    """
    horizons = _check_horizons(curves)
    ids = [c.model_id for c in curves]
    subset = list(ids if subset is None else subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    unknown = [m for m in subset if m not in ids]
    if unknown:
        raise ValueError(f"models {unknown} not among curves {ids}")
    win = _winners(curves)
    return {m: float(win[ids.index(m)].sum()) / len(horizons) for m in subset}


def family_fraction(curves: Sequence[GlideCurve], family: Sequence[str] = FOREST_FAMILY) -> float:
    """Fraction of horizons at which some model of ``family`` is (jointly) best."""
    horizons = _check_horizons(curves)
    win = _winners(curves)
    rows = [i for i, c in enumerate(curves) if c.model_id in family]
    if not rows:
        raise ValueError(f"no curve belongs to {list(family)}")
    return float(win[rows].any(axis=0).sum()) / len(horizons)


# =============================================================================
# Text formats
# =============================================================================

def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _meta_lines(meta: dict) -> list[str]:
    return [f"# {k}={json.dumps(meta[k], sort_keys=True)}" for k in sorted(meta)]


def _split_meta(text: str) -> tuple[dict, str]:
    meta, body = {}, []
    for line in text.splitlines(keepends=True):
        if line.startswith("# "):
            k, _, v = line[2:].rstrip("\n").partition("=")
            meta[k] = json.loads(v)
        else:
            body.append(line)
    return meta, "".join(body)


def glide_rows(curves: Sequence[GlideCurve]) -> list[dict]:
    rows = []
    for c in curves:
        for h, r in zip(c.horizons, c.rmsfe):
            rows.append({"model": c.model_id, "month": c.target_month, "protocol": c.protocol,
                         "horizon_days": h, "rmsfe": float(r)})
    return rows


def glide_to_csv(curves: Sequence[GlideCurve], meta: dict | None = None) -> str:
    out = io.StringIO()
    for line in _meta_lines(meta or {}):
        out.write(line + "\n")
    out.write(",".join(GLIDE_FIELDS) + "\n")
    for row in glide_rows(curves):
        out.write(f"{row['model']},{row['month']},{row['protocol']},{row['horizon_days']},"
                  f"{_fmt(row['rmsfe'])}\n")
    return out.getvalue()


def glide_to_jsonl(curves: Sequence[GlideCurve], meta: dict | None = None) -> str:
    lines = [json.dumps({"meta": meta or {}}, sort_keys=True)]
    for c in curves:
        for h, r in zip(c.horizons, c.rmsfe):
            rec = {"model": c.model_id, "month": c.target_month, "protocol": c.protocol,
                   "horizon_days": h, "rmsfe": None if math.isnan(r) else float(r)}
            if h in c.gaps:
                rec["gap"] = c.gaps[h]
            lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def glide_from_csv(text: str) -> tuple[dict, list[GlideCurve]]:
    """Parse a glide CSV back into curves (gap reasons are not kept)."""
    meta, body = _split_meta(text)
    reader = csv.DictReader(io.StringIO(body))
    if tuple(reader.fieldnames or ()) != GLIDE_FIELDS:
        raise ValueError(f"expected columns {GLIDE_FIELDS}, got {reader.fieldnames}")
    groups: dict[tuple, list] = {}
    for row in reader:
        key = (row["model"], int(row["month"]), row["protocol"])
        val = float(row["rmsfe"]) if row["rmsfe"] else math.nan
        groups.setdefault(key, []).append((int(row["horizon_days"]), val))
    curves = []
    for (model, month, protocol), pts in groups.items():
        curves.append(GlideCurve(model, month, tuple(h for h, _ in pts),
                                 np.array([v for _, v in pts]), protocol))
    return meta, curves


def history_to_csv(records: Sequence[ForecastRecord], meta: dict | None = None) -> str:
    out = io.StringIO()
    for line in _meta_lines(meta or {}):
        out.write(line + "\n")
    out.write(",".join(HISTORY_FIELDS) + "\n")
    for r in records:
        out.write(f"{r.model_id},{r.target_month},{r.year},{r.asof_date.isoformat()},"
                  f"{_fmt(r.forecast)},{_fmt(r.realized)},{_fmt(r.error)}\n")
    return out.getvalue()


def history_to_jsonl(records: Sequence[ForecastRecord], meta: dict | None = None) -> str:
    lines = [json.dumps({"meta": meta or {}}, sort_keys=True)]
    for r in records:
        rec = {"model": r.model_id, "month": r.target_month, "year": r.year,
               "asof_date": r.asof_date.isoformat()}
        for k in ("forecast", "realized", "error"):
            v = getattr(r, k)
            rec[k] = None if math.isnan(v) else v
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def history_from_csv(text: str) -> tuple[dict, list[ForecastRecord]]:
    meta, body = _split_meta(text)
    reader = csv.DictReader(io.StringIO(body))
    if tuple(reader.fieldnames or ()) != HISTORY_FIELDS:
        raise ValueError(f"expected columns {HISTORY_FIELDS}, got {reader.fieldnames}")

    def num(s):
        return float(s) if s else math.nan

    recs = [ForecastRecord(row["model"], int(row["month"]), int(row["year"]),
                           dt.date.fromisoformat(row["asof_date"]), num(row["forecast"]),
                           num(row["realized"]), num(row["error"]))
            for row in reader]
    return meta, recs
