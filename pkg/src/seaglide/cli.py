"""Command-line entry point: ``seaglide <subcommand> [options]``.

Subcommands
-----------
ingest     parse the four raw sources into the canonical archive cache
glide      in-sample / out-of-bag glide curves per target month
oos        recursive out-of-sample glide curves per target month
best-frac  fraction of horizons each model is best, from oos glide files
forecast   point forecasts for one as-of date
history    annual out-of-sample forecasts made on a fixed calendar day
betas      averaged leaf coefficients per training year for forest models

Settings come from an optional ``key = value`` file (``--config``) and are
overridden by ``--set key=value`` and the named flags.  Exit codes: 0 ok,
1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import math
import sys
import urllib.parse
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import DataError, MissingInput, NumericError, SeaglideError
from .evalglide import (COMPARISON_MODELS, FOREST_FAMILY, EvalOptions, family_fraction,
                        forecast_history, fraction_best, glide_from_csv, glide_to_csv,
                        glide_to_jsonl, history_to_csv, history_to_jsonl, insample_glide,
                        oos_forecast, oos_glide)
from .features import MODEL_SPECS, build_training_set, model_spec, target_year_for
from .ingest import (DEFAULT_URLS, SOURCES, LagConfig, RawArchive, fetch_source, load_archive,
                     parse_source, save_archive)
from .mrf import MrfParams, beta_paths, fit_forest
from .timeseries import month_end

logger = logging.getLogger("seaglide")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


# =============================================================================
# Configuration
# =============================================================================

def parse_int_list(text: str) -> tuple[int, ...]:
    """Comma-separated integers and inclusive ``a..b`` ranges, e.g. ``120..0`` or ``6,9..10``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            a, b = (int(x) for x in part.split("..", 1))
            step = 1 if b >= a else -1
            out.extend(range(a, b + step, step))
        else:
            out.append(int(part))
    return tuple(out)


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def _optional_int(text: str):
    return None if str(text).strip().lower() in ("", "none", "auto") else int(text)


@dataclass(frozen=True)
class RunConfig:
    """Every setting a run depends on; see ``seaglide --help``."""
    sie: str = DEFAULT_URLS["sie"]
    sit: str = DEFAULT_URLS["sit"]
    at: str = DEFAULT_URLS["at"]
    co2: str = DEFAULT_URLS["co2"]
    raw_dir: str = "data/raw"
    cache_dir: str = "data/cache"
    out_dir: str = "out"
    lag_sit: int = 2
    lag_co2: int = 3
    lag_at: int = 4
    mtry_fraction: float = 1 / 3
    row_subsample_rate: float = 0.9
    zeta: float = 0.25
    lam: float = 1.0
    n_trees: int = 500
    min_leaf_obs: int | None = None
    block_len: int = 2
    n_pcs: int = 5
    models: tuple = ("LinearTrend", "FELR", "FEML", "PocketFEML")
    months: tuple = (9,)
    horizons: tuple = tuple(range(120, -1, -1))
    insample_years: tuple = tuple(range(1979, 2021))
    test_years: tuple = tuple(range(2012, 2022))
    first_year: int = 1979
    seed: int = 0
    n_jobs: int = 1

    _PARSERS = {
        "lag_sit": int, "lag_co2": int, "lag_at": int, "mtry_fraction": float,
        "row_subsample_rate": float, "zeta": float, "lam": float, "n_trees": int,
        "min_leaf_obs": _optional_int, "block_len": int, "n_pcs": int,
        "models": _str_list, "months": parse_int_list, "horizons": parse_int_list,
        "insample_years": parse_int_list, "test_years": parse_int_list,
        "first_year": int, "seed": int, "n_jobs": int,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def updated(self, pairs: dict[str, str]) -> "RunConfig":
        changes = {}
        for key, raw in pairs.items():
            if key not in self.keys():
                raise UsageError(f"unknown config key {key!r}")
            try:
                changes[key] = self._PARSERS.get(key, str)(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from None
        return dataclasses.replace(self, **changes).validated()

    def validated(self) -> "RunConfig":
        bad = [m for m in self.models if m not in MODEL_SPECS]
        if bad:
            raise UsageError(f"unknown models {bad}; choose from {sorted(MODEL_SPECS)}")
        if not self.months or any(not 1 <= m <= 12 for m in self.months):
            raise UsageError("months must be in 1..12")
        h = self.horizons
        if not h or min(h) < 0 or any(a <= b for a, b in zip(h, h[1:])):
            raise UsageError("horizons must be non-negative and strictly decreasing")
        if not self.test_years or not self.insample_years:
            raise UsageError("year lists must be nonempty")
        try:
            self.mrf_params()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        return self

    def mrf_params(self) -> MrfParams:
        return MrfParams(mtry_fraction=self.mtry_fraction,
                         row_subsample_rate=self.row_subsample_rate, zeta=self.zeta,
                         lam=self.lam, n_trees=self.n_trees, min_leaf_obs=self.min_leaf_obs,
                         block_len=self.block_len, seed=self.seed)

    def eval_options(self) -> EvalOptions:
        return EvalOptions(mrf=self.mrf_params(),
                           lags=LagConfig(sit=self.lag_sit, co2=self.lag_co2, at=self.lag_at),
                           n_pcs=self.n_pcs, seed=self.seed, first_year=self.first_year,
                           n_jobs=self.n_jobs)

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in dataclasses.asdict(self).items()}


def read_config_file(path) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return pairs


FLAG_KEYS = ("months", "models", "horizons", "test_years", "seed", "n_trees", "out_dir",
             "cache_dir", "n_jobs")


def load_config(args) -> RunConfig:
    """File settings, then ``--set`` pairs, then named flags (flags win)."""
    pairs = {}
    if getattr(args, "config", None):
        try:
            pairs.update(read_config_file(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        pairs[key.strip()] = value.strip()
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            pairs[key] = str(value)
    return RunConfig().updated(pairs)


def run_metadata(cfg: RunConfig, command: str, **extra) -> dict:
    meta = {"command": command, "version": __version__, "config": cfg.as_dict()}
    meta.update(extra)
    return meta


# =============================================================================
# Commands
# =============================================================================

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def cmd_ingest(cfg: RunConfig, fetch: bool = False) -> Path:
    """Parse every source, then write the canonical cache and its manifest.

    All sources are attempted; parse failures are collected and reported
    together, and nothing is written unless every source parses.
    """
    raw_dir = Path(cfg.raw_dir)
    parsed, errors, entries = {}, {}, {}
    for kind in SOURCES:
        location = getattr(cfg, kind)
        remote = urllib.parse.urlparse(location).scheme in ("http", "https", "ftp")
        try:
            if remote and not fetch:
                raise MissingInput(f"{location} is remote; pass --fetch to download")
            if remote:
                path = fetch_source(location, raw_dir, Path(urllib.parse.urlparse(location).path).name)
                retrieved = dt.date.today().isoformat()
            else:
                path = Path(location)
                if not path.is_file():
                    raise MissingInput(f"no such file: {location}")
                retrieved = dt.date.fromtimestamp(path.stat().st_mtime).isoformat()
            data = path.read_bytes()
            parsed[kind] = parse_source(kind, data)
            entries[kind] = {"source": kind, "location": location, "retrieved": retrieved,
                             "sha256": _sha256(data)}
        except (DataError, OSError) as exc:
            errors[kind] = exc
    if errors:
        for kind, exc in errors.items():
            print(f"ingest: {kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        first = next(iter(errors.values()))
        raise first if isinstance(first, DataError) else MissingInput(str(first))
    archive = RawArchive(parsed["sie"], parsed["sit"], parsed["at"], parsed["co2"])
    cache = Path(cfg.cache_dir)
    files = save_archive(archive, cache)
    for kind in SOURCES:
        entries[kind]["cache_file"] = files[kind]
        entries[kind]["cache_sha256"] = _sha256((cache / files[kind]).read_bytes())
    manifest = {"version": __version__, "sources": [entries[k] for k in SOURCES]}
    return _write(cache / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _archive(cfg: RunConfig) -> RawArchive:
    cache = Path(cfg.cache_dir)
    if not (cache / "manifest.json").is_file():
        raise MissingInput(f"no archive cache in {cache}; run `seaglide ingest` first")
    return load_archive(cache)


def cmd_glide(cfg: RunConfig, archive: RawArchive | None = None) -> list[Path]:
    """One CSV (plus JSONL mirror) per target month with every model's
    in-sample curve; forests report out-of-bag error."""
    archive = archive or _archive(cfg)
    opts = cfg.eval_options()
    out = []
    for month in cfg.months:
        curves = [insample_glide(m, archive, month, cfg.horizons, cfg.insample_years, opts)
                  for m in cfg.models]
        meta = run_metadata(cfg, "glide", month=month)
        stem = Path(cfg.out_dir) / f"glide_insample_m{month:02d}"
        out.append(_write(stem.with_suffix(".csv"), glide_to_csv(curves, meta)))
        _write(stem.with_suffix(".jsonl"), glide_to_jsonl(curves, meta))
    return out


def cmd_oos(cfg: RunConfig, archive: RawArchive | None = None) -> list[Path]:
    archive = archive or _archive(cfg)
    opts = cfg.eval_options()
    out = []
    for month in cfg.months:
        curves = oos_glide(cfg.models, archive, month, cfg.test_years, cfg.horizons, opts)
        meta = run_metadata(cfg, "oos", month=month)
        stem = Path(cfg.out_dir) / f"glide_oos_m{month:02d}"
        out.append(_write(stem.with_suffix(".csv"), glide_to_csv(curves, meta)))
        _write(stem.with_suffix(".jsonl"), glide_to_jsonl(curves, meta))
    return out


def cmd_best_fraction(cfg: RunConfig, pattern: str = "glide_oos_m*.csv") -> Path:
    """Fractions over the comparison set, read back from glide files."""
    files = sorted(Path(cfg.out_dir).glob(pattern))
    if not files:
        raise MissingInput(f"no files matching {pattern} in {cfg.out_dir}")
    lines = ["month,model,fraction_best"]
    for path in files:
        _, curves = glide_from_csv(path.read_text())
        keep = [c for c in curves if c.model_id in COMPARISON_MODELS]
        if not keep:
            continue
        month = keep[0].target_month
        for model, frac in fraction_best(keep).items():
            lines.append(f"{month},{model},{frac!r}")
        if any(c.model_id in FOREST_FAMILY for c in keep):
            lines.append(f"{month},{'+'.join(FOREST_FAMILY)},{family_fraction(keep)!r}")
    return _write(Path(cfg.out_dir) / "best_fraction.csv", "\n".join(lines) + "\n")


def cmd_forecast(cfg: RunConfig, asof: dt.date, archive: RawArchive | None = None) -> Path:
    """Forecast every configured (model, month) from data visible on ``asof``."""
    archive = archive or _archive(cfg)
    opts = cfg.eval_options()
    lines = ["model,month,year,asof_date,horizon_days,forecast,realized"]
    for month in cfg.months:
        year = target_year_for(asof, month)
        h = (month_end(year, month) - asof).days
        for m in cfg.models:
            rec = oos_forecast(m, archive, month, h, year, opts)
            lines.append(f"{m},{month},{year},{asof.isoformat()},{h},{rec.forecast!r},"
                         f"{'' if math.isnan(rec.realized) else repr(rec.realized)}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    meta = "".join(f"# {k}={json.dumps(v, sort_keys=True)}\n"
                   for k, v in sorted(run_metadata(cfg, "forecast", asof=asof.isoformat()).items()))
    return _write(Path(cfg.out_dir) / f"forecast_{asof.isoformat()}.csv", meta + text)


def cmd_history(cfg: RunConfig, asof_day: tuple[int, int],
                archive: RawArchive | None = None) -> list[Path]:
    archive = archive or _archive(cfg)
    opts = cfg.eval_options()
    out = []
    for month in cfg.months:
        recs = [r for m in cfg.models
                for r in forecast_history(m, archive, month, asof_day, cfg.test_years, opts)]
        meta = run_metadata(cfg, "history", month=month, asof_day=list(asof_day))
        stem = Path(cfg.out_dir) / f"history_m{month:02d}_{asof_day[0]:02d}{asof_day[1]:02d}"
        out.append(_write(stem.with_suffix(".csv"), history_to_csv(recs, meta)))
        _write(stem.with_suffix(".jsonl"), history_to_jsonl(recs, meta))
    return out


def cmd_betas(cfg: RunConfig, horizon: int, archive: RawArchive | None = None) -> list[Path]:
    """Averaged leaf coefficients per training year for each forest model."""
    archive = archive or _archive(cfg)
    opts = cfg.eval_options()
    out = []
    for month in cfg.months:
        for m in cfg.models:
            spec = model_spec(m)
            if not spec.forest:
                continue
            ds = build_training_set(archive, spec, month, horizon, cfg.insample_years,
                                    opts.lags, opts.n_pcs)
            forest = fit_forest(ds, opts.mrf, n_jobs=opts.n_jobs)
            B = beta_paths(forest, ds)
            lines = [f"# {k}={json.dumps(v, sort_keys=True)}" for k, v in
                     sorted(run_metadata(cfg, "betas", month=month, horizon=horizon).items())]
            lines.append(",".join(["year", "asof_date"] + [f"beta_{n}" for n in ds.x_names]))
            for i, year in enumerate(ds.years):
                lines.append(",".join([str(year), ds.asof_dates[i].isoformat()]
                                      + [repr(float(v)) for v in B[i]]))
            path = Path(cfg.out_dir) / f"betas_{m}_m{month:02d}_h{horizon:03d}.csv"
            out.append(_write(path, "\n".join(lines) + "\n"))
    return out


# =============================================================================
# Argument parsing
# =============================================================================

def _month_day(text: str) -> tuple[int, int]:
    try:
        m, d = (int(x) for x in text.split("-"))
        dt.date(2001, m, d)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MM-DD, got {text!r}") from None
    return m, d


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one setting (repeatable)")
    common.add_argument("--months", help="target months, e.g. 9 or 6..10")
    common.add_argument("--models", help="comma-separated model ids")
    common.add_argument("--horizons", help="days to target end, e.g. 120..0")
    common.add_argument("--test-years", dest="test_years", help="e.g. 2012..2021")
    common.add_argument("--seed", type=int)
    common.add_argument("--n-trees", dest="n_trees", type=int)
    common.add_argument("--n-jobs", dest="n_jobs", type=int)
    common.add_argument("--out", dest="out_dir", help="output directory")
    common.add_argument("--cache", dest="cache_dir", help="archive cache directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="seaglide", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse raw sources into the cache")
    p.add_argument("--fetch", action="store_true", help="allow downloading remote sources")
    sub.add_parser("glide", parents=[common], help="in-sample / out-of-bag glide curves")
    sub.add_parser("oos", parents=[common], help="recursive out-of-sample glide curves")
    sub.add_parser("best-frac", parents=[common], help="fraction-best table from oos files")
    p = sub.add_parser("forecast", parents=[common], help="forecasts for one as-of date")
    p.add_argument("--asof", required=True, type=dt.date.fromisoformat, help="YYYY-MM-DD")
    p = sub.add_parser("history", parents=[common],
                       help="annual out-of-sample forecasts on a fixed calendar day")
    p.add_argument("--asof-day", dest="asof_day", required=True, type=_month_day, help="MM-DD")
    p = sub.add_parser("betas", parents=[common], help="export averaged leaf coefficients")
    p.add_argument("--horizon", type=int, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "ingest":
            written = [cmd_ingest(cfg, fetch=args.fetch)]
        elif args.command == "glide":
            written = cmd_glide(cfg)
        elif args.command == "oos":
            written = cmd_oos(cfg)
        elif args.command == "best-frac":
            written = [cmd_best_fraction(cfg)]
        elif args.command == "forecast":
            written = [cmd_forecast(cfg, args.asof)]
        elif args.command == "history":
            written = cmd_history(cfg, args.asof_day)
        else:
            written = cmd_betas(cfg, args.horizon)
    except UsageError as exc:
        print(f"seaglide: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"seaglide: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"seaglide: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SeaglideError as exc:
        print(f"seaglide: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in written:
        logger.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
