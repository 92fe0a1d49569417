"""Feature rows and per-(month, horizon) training sets.

One training row per year.  For target month ``m``, horizon ``h`` and year
``t`` the as-of date is ``(last day of m in t) - h days``; every feature is
computed from the vintage available on that date and the label is the
realized monthly mean extent.

Linear part (``X``)
    trend:  c, Time
    felr:   c, Time, SIE_LastMonth, SIE_Last30Days, SIE_Today
    pocket: c, Time, SIE_Today

State set (``S``) for the forest models
    the X columns, 14 daily SIE values ending on the as-of day, the latest
    14 published daily SIT values and their 30-day mean, monthly lags of
    SIE, SIT, CO2 and AT from January of the previous year onwards, and
    five principal components of all of the above.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateMatrix, FeatureMismatch, IncompleteWindow
from .ingest import LagConfig, RawArchive, VintageSnapshot, vintage_view
from .timeseries import last_complete_month, month_end, month_length, trailing_mean

logger = logging.getLogger(__name__)

TIME_ORIGIN = 1978
N_DAILY_LAGS = 14
N_PCS = 5

FELR_NAMES = ("c", "Time", "SIE_LastMonth", "SIE_Last30Days", "SIE_Today")
POCKET_NAMES = ("c", "Time", "SIE_Today")
TREND_NAMES = ("c", "Time")


@dataclass(frozen=True)
class ModelSpec:
    """Which linear part and which state set a model uses.

    ``linear`` is one of trend / felr / pocket; ``state`` is ``"x"`` (state
    set equals the linear part) or ``"full"``.
    """

    kind: str
    linear: str
    state: str
    forest: bool

    @property
    def linear_names(self) -> tuple[str, ...]:
        return {"trend": TREND_NAMES, "felr": FELR_NAMES, "pocket": POCKET_NAMES}[self.linear]


MODEL_SPECS = {
    "LinearTrend": ModelSpec("LinearTrend", "trend", "x", forest=False),
    "FELR": ModelSpec("FELR", "felr", "x", forest=False),
    "PocketFELR": ModelSpec("PocketFELR", "pocket", "x", forest=False),
    "FEML": ModelSpec("FEML", "felr", "full", forest=True),
    "PocketFEML": ModelSpec("PocketFEML", "pocket", "full", forest=True),
    "FEML_SeqX": ModelSpec("FEML_SeqX", "felr", "x", forest=True),
}


def model_spec(kind: str) -> ModelSpec:
    try:
        return MODEL_SPECS[kind]
    except KeyError:
        raise ValueError(f"unknown model {kind!r}; choose from {sorted(MODEL_SPECS)}") from None


@dataclass(frozen=True)
class FeatureRow:
    names: tuple[str, ...]
    values: np.ndarray
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if len(vals) != len(self.names):
            raise ValueError("names and values differ in length")
        if not np.isfinite(vals).all():
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", tuple(self.names))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    def select(self, names: Sequence[str]) -> "FeatureRow":
        d = self.as_dict()
        missing = [n for n in names if n not in d]
        if missing:
            raise FeatureMismatch(f"row lacks features {missing}")
        return FeatureRow(tuple(names), np.array([d[n] for n in names]))


# =============================================================================
# Calendar helpers
# =============================================================================

def target_year_for(asof_date: dt.date, target_month: int) -> int:
    """Year of the first target month ending on or after ``asof_date``."""
    if target_month >= asof_date.month:
        return asof_date.year
    return asof_date.year + 1


def asof_for(year: int, target_month: int, horizon_days: int) -> dt.date:
    return month_end(year, target_month) - dt.timedelta(days=horizon_days)


def last30_coincides(asof_date: dt.date) -> bool:
    """True when the 30 days ending on ``asof_date`` are exactly the last complete month."""
    lcm = last_complete_month(asof_date)
    return month_end(*lcm) == asof_date and month_length(*lcm) == 30


# =============================================================================
# Rows
# =============================================================================

def _felr_values(snapshot: VintageSnapshot, asof_date: dt.date, target_month: int) -> dict:
    year = target_year_for(asof_date, target_month)
    lcm = last_complete_month(asof_date)
    last_month = snapshot.sie_monthly.value_at(*lcm)
    if np.isnan(last_month):
        raise IncompleteWindow(f"SIE monthly mean for {lcm[0]}-{lcm[1]:02d} unavailable")
    today = snapshot.sie_daily.value_at(asof_date)
    if np.isnan(today):
        raise IncompleteWindow(f"SIE missing on {asof_date}")
    return {
        "c": 1.0,
        "Time": float(year - TIME_ORIGIN),
        "SIE_LastMonth": last_month,
        "SIE_Last30Days": trailing_mean(snapshot.sie_daily, asof_date, 30),
        "SIE_Today": today,
    }


def felr_row(snapshot: VintageSnapshot, asof_date: dt.date, target_month: int) -> FeatureRow:
    vals = _felr_values(snapshot, asof_date, target_month)
    dropped = ()
    if last30_coincides(asof_date):
        dropped = ("SIE_Last30Days",)
        del vals["SIE_Last30Days"]
    return FeatureRow(tuple(vals), np.array(list(vals.values())), dropped)


def pocket_row(snapshot: VintageSnapshot, asof_date: dt.date, target_month: int) -> FeatureRow:
    vals = _felr_values(snapshot, asof_date, target_month)
    return FeatureRow(POCKET_NAMES, np.array([vals[n] for n in POCKET_NAMES]))


def trend_row(asof_date: dt.date, target_month: int) -> FeatureRow:
    year = target_year_for(asof_date, target_month)
    return FeatureRow(TREND_NAMES, np.array([1.0, float(year - TIME_ORIGIN)]))


def _monthly_lags(series, first: tuple[int, int], last: tuple[int, int], prefix: str) -> dict:
    vals = series.window(first, last)
    if len(vals) == 0 or np.isnan(vals).any():
        raise IncompleteWindow(f"{prefix}: monthly lags {first}..{last} incomplete")
    return {f"{prefix}_lag{k + 1}": float(v) for k, v in enumerate(vals[::-1])}


def _state_extra(snapshot: VintageSnapshot, asof_date: dt.date) -> dict:
    """State features beyond the linear part (items 2-5)."""
    out = {}
    sie = snapshot.sie_daily.window(asof_date - dt.timedelta(days=N_DAILY_LAGS - 1), asof_date)
    if np.isnan(sie).any():
        raise IncompleteWindow(f"SIE daily lags ending {asof_date} incomplete")
    out.update({f"SIE_D{k}": float(v) for k, v in enumerate(sie[::-1])})

    sit = snapshot.sit_daily
    if len(sit) < 30:
        raise IncompleteWindow("fewer than 30 published SIT days")
    sit_end = sit.end
    sit14 = sit.window(sit_end - dt.timedelta(days=N_DAILY_LAGS - 1), sit_end)
    if np.isnan(sit14).any():
        raise IncompleteWindow(f"SIT daily lags ending {sit_end} incomplete")
    out.update({f"SIT_D{k}": float(v) for k, v in enumerate(sit14[::-1])})
    out["SIT_Last30Days"] = trailing_mean(sit, sit_end, 30)

    first = (asof_date.year - 1, 1)
    vis = snapshot.visible_through
    out.update(_monthly_lags(snapshot.sie_monthly, first, vis["SIE_M"], "SIE_M"))
    out.update(_monthly_lags(snapshot.sit_monthly, first, vis["SIT_M"], "SIT_M"))
    out.update(_monthly_lags(snapshot.co2_monthly, first, vis["CO2"], "CO2"))
    out.update(_monthly_lags(snapshot.at_monthly, first, vis["AT"], "AT"))
    return out


def state_row(snapshot: VintageSnapshot, asof_date: dt.date, target_month: int) -> FeatureRow:
    """FELR features followed by the state-only features (no principal components)."""
    x = felr_row(snapshot, asof_date, target_month)
    extra = _state_extra(snapshot, asof_date)
    return FeatureRow(x.names + tuple(extra), np.concatenate([x.values, list(extra.values())]),
                      x.dropped)


# =============================================================================
# Principal components
# =============================================================================

@dataclass(frozen=True, eq=False)
class PCAFit:
    """Principal components of standardized columns.

    ``kept`` indexes the input columns that survived the zero-variance
    screen; ``loadings`` has one row per component.
    """

    scores: np.ndarray
    loadings: np.ndarray
    column_means: np.ndarray
    column_scales: np.ndarray
    kept: np.ndarray
    explained_variance_ratio: np.ndarray

    def transform(self, matrix) -> np.ndarray:
        m = np.atleast_2d(np.asarray(matrix, dtype=float))[:, self.kept]
        return ((m - self.column_means) / self.column_scales) @ self.loadings.T


def informative_columns(matrix: np.ndarray) -> np.ndarray:
    sd = matrix.std(axis=0)
    scale = np.abs(matrix).max(axis=0)
    return np.flatnonzero(sd > 1e-12 * np.maximum(scale, 1.0))


def pca_scores(matrix, k: int) -> PCAFit:
    """Top-``k`` principal component scores of the standardized columns.

    Columns are centred and scaled to unit (population) variance; constant
    columns are dropped first.  Each component's sign is fixed so its
    largest-magnitude loading is positive.
    """
    m = np.asarray(matrix, dtype=float)
    n, p = m.shape
    if n < 2:
        raise DegenerateMatrix("need at least two rows")
    kept = informative_columns(m)
    if len(kept) < 2:
        raise DegenerateMatrix(f"only {len(kept)} informative column(s)")
    if len(kept) < p:
        logger.warning("pca: dropped %d zero-variance column(s)", p - len(kept))
    if not 1 <= k <= min(n - 1, len(kept)):
        raise ValueError(f"k={k} outside 1..{min(n - 1, len(kept))}")
    sub = m[:, kept]
    means = sub.mean(axis=0)
    scales = sub.std(axis=0)
    z = (sub - means) / scales
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    vt = vt[:k]
    flip = np.sign(vt[np.arange(k), np.abs(vt).argmax(axis=1)])
    vt = vt * flip[:, None]
    ratio = (s ** 2 / np.sum(s ** 2))[:k]
    return PCAFit(z @ vt.T, vt, means, scales, kept, ratio)


# =============================================================================
# Training sets
# =============================================================================

@dataclass
class RowParts:
    year: int
    asof_date: dt.date
    linear: dict
    coincide: bool
    extra: dict
    label: float
    felr: dict = field(default_factory=dict)


def _row_parts(archive: RawArchive, spec: ModelSpec, target_month: int, horizon_days: int,
               year: int, lags: LagConfig | None, need_label: bool = True) -> RowParts:
    asof = asof_for(year, target_month, horizon_days)
    label = archive.realized_monthly_sie(year, target_month)
    if need_label and np.isnan(label):
        raise IncompleteWindow(f"no realized SIE for {year}-{target_month:02d}")
    if spec.linear == "trend":
        linear = dict(zip(TREND_NAMES, trend_row(asof, target_month).values.tolist()))
        return RowParts(year, asof, linear, False, {}, label)
    snap = vintage_view(archive, asof, lags)
    vals = _felr_values(snap, asof, target_month)
    linear = {n: vals[n] for n in spec.linear_names}
    extra = _state_extra(snap, asof) if spec.state == "full" else {}
    return RowParts(year, asof, linear, last30_coincides(asof), extra, label, vals)


def collect_rows(archive: RawArchive, spec: ModelSpec, target_month: int, horizon_days: int,
                 years: Sequence[int], lags: LagConfig | None = None,
                 need_label: bool = True) -> dict[int, RowParts | str]:
    """Row parts per year; years that cannot be built map to the reason."""
    out: dict[int, RowParts | str] = {}
    for year in years:
        try:
            out[year] = _row_parts(archive, spec, target_month, horizon_days, year, lags,
                                   need_label)
        except DataError as exc:
            out[year] = str(exc)
    return out


@dataclass(eq=False)
class Dataset:
    spec: ModelSpec
    target_month: int
    horizon_days: int
    years: list[int]
    asof_dates: list[dt.date]
    x_names: tuple[str, ...]
    s_names: tuple[str, ...]
    X: np.ndarray
    S: np.ndarray
    y: np.ndarray
    excluded: dict[int, str] = field(default_factory=dict)
    pca: PCAFit | None = None
    pre_pca_names: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.years)

    def row(self, year: int) -> tuple[FeatureRow, FeatureRow]:
        i = self.years.index(year)
        return FeatureRow(self.x_names, self.X[i]), FeatureRow(self.s_names, self.S[i])

    def to_csv(self) -> str:
        header = ["year", "asof_date", "y"] + [f"X:{n}" for n in self.x_names] + \
            [f"S:{n}" for n in self.s_names]
        lines = [",".join(header)]
        for i, year in enumerate(self.years):
            vals = [repr(float(v)) for v in (self.y[i], *self.X[i], *self.S[i])]
            lines.append(",".join([str(year), self.asof_dates[i].isoformat()] + vals))
        return "\n".join(lines) + "\n"


def _common_names(dicts: list[dict]) -> list[str]:
    names = list(dicts[0])
    for d in dicts[1:]:
        if list(d) != names:
            present = set(d)
            names = [n for n in names if n in present]
    return names


def _independent_columns(X: np.ndarray, names: Sequence[str]) -> list[int]:
    """Indices of columns to keep: beyond the intercept and trend, a column
    that is constant or equal to an earlier kept column is dropped."""
    keep = []
    for k, name in enumerate(names):
        col = X[:, k]
        if name not in ("c", "Time"):
            if (col == col[0]).all() or any((col == X[:, i]).all() for i in keep):
                continue
        keep.append(k)
    return keep


@dataclass(eq=False)
class Design:
    """A training Dataset plus aligned rows for held-out years."""
    train: Dataset
    new_rows: dict[int, tuple[FeatureRow, FeatureRow]]


def assemble(spec: ModelSpec, target_month: int, horizon_days: int,
             rows: dict[int, RowParts | str], train_years: Sequence[int],
             new_years: Sequence[int] = (), n_pcs: int = N_PCS) -> Design:
    """Stack row parts into a Dataset; project held-out rows with frozen PCA."""
    excluded = {y: rows[y] for y in train_years if isinstance(rows[y], str)}
    for y, why in excluded.items():
        logger.info("%s m=%d h=%d: year %d excluded: %s", spec.kind, target_month,
                    horizon_days, y, why)
    train = [rows[y] for y in train_years if not isinstance(rows[y], str)]
    new = []
    for y in new_years:
        if isinstance(rows[y], str):
            raise IncompleteWindow(f"held-out year {y}: {rows[y]}")
        new.append(rows[y])
    if not train:
        raise IncompleteWindow(f"no usable training rows for month {target_month}, h={horizon_days}")
    every = train + new

    coincide = all(r.coincide for r in every)
    x_names = list(spec.linear_names)
    if spec.linear == "felr" and coincide:
        x_names.remove("SIE_Last30Days")
    X_all = np.array([[r.linear[n] for n in x_names] for r in every])
    keep = _independent_columns(X_all, x_names)
    if len(keep) < len(x_names):
        logger.info("%s m=%d h=%d: dropped exactly collinear %s", spec.kind, target_month,
                    horizon_days, [n for i, n in enumerate(x_names) if i not in keep])
        x_names = [x_names[i] for i in keep]
        X_all = X_all[:, keep]

    if spec.state == "full":
        # the state always carries every FELR feature, whatever the linear part
        lin_names = list(x_names) + [n for n in FELR_NAMES if n not in spec.linear_names
                                     and not (coincide and n == "SIE_Last30Days")]
        L_all = np.array([[r.felr[n] for n in lin_names] for r in every])
        keep = _independent_columns(L_all, lin_names)
        lin_names = [lin_names[i] for i in keep]
        L_all = L_all[:, keep]
        extra_names = _common_names([r.extra for r in every])
        if any(len(r.extra) != len(extra_names) for r in every):
            logger.info("%s m=%d h=%d: state columns truncated to %d common names",
                        spec.kind, target_month, horizon_days, len(extra_names))
        E_all = np.array([[r.extra[n] for n in extra_names] for r in every])
        pre_names = tuple(lin_names) + tuple(extra_names)
        S_all = np.hstack([L_all, E_all])
    else:
        pre_names = tuple(x_names)
        S_all = X_all.copy()

    ntr = len(train)
    S_train, S_new = S_all[:ntr], S_all[ntr:]
    pca = None
    s_names = pre_names
    if spec.state == "full" and n_pcs > 0:
        # the intercept is constant by construction; leave it out quietly
        cols = [i for i, n in enumerate(pre_names) if n != "c"]
        kept = informative_columns(S_train[:, cols])
        k = min(n_pcs, ntr - 1, len(kept))
        if len(kept) >= 2 and k >= 1:
            pca = pca_scores(S_train[:, cols], k)
            pcs = [f"PC{i + 1}" for i in range(k)]
            s_names = pre_names + tuple(pcs)
            S_train = np.hstack([S_train, pca.scores])
            if len(new):
                S_new = np.hstack([S_new, pca.transform(S_new[:, cols])])
        else:
            logger.warning("%s m=%d h=%d: state matrix degenerate; no principal components",
                           spec.kind, target_month, horizon_days)

    dataset = Dataset(
        spec=spec, target_month=target_month, horizon_days=horizon_days,
        years=[r.year for r in train], asof_dates=[r.asof_date for r in train],
        x_names=tuple(x_names), s_names=s_names,
        X=X_all[:ntr], S=S_train, y=np.array([r.label for r in train]),
        excluded=excluded, pca=pca, pre_pca_names=pre_names)
    new_rows = {r.year: (FeatureRow(tuple(x_names), X_all[ntr + i]),
                         FeatureRow(s_names, S_new[i]))
                for i, r in enumerate(new)}
    return Design(dataset, new_rows)


def build_training_set(archive: RawArchive, spec: ModelSpec, target_month: int,
                       horizon_days: int, years: Sequence[int],
                       lags: LagConfig | None = None, n_pcs: int = N_PCS) -> Dataset:
    """Training set over ``years`` with principal components fit on all of its rows."""
    rows = collect_rows(archive, spec, target_month, horizon_days, years, lags)
    return assemble(spec, target_month, horizon_days, rows, list(years), (), n_pcs).train
