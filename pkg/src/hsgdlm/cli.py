"""Command line: ``hsgdlm {run,backtest,metrics,variogram,simulate}``.

Settings come from defaults, then ``--config FILE``, then ``--set
section.key=value`` pairs, then the dedicated flags. ``HSGDLM_NUM_THREADS``
caps the BLAS thread pools; it must be read before numpy is imported.
"""

from __future__ import annotations

import os

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")
if os.environ.get("HSGDLM_NUM_THREADS"):
    for _var in _THREAD_VARS:
        os.environ[_var] = os.environ["HSGDLM_NUM_THREADS"]

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .config import RunConfig  # noqa: E402
from .data import PricePanel, daily_log_rv, load_prices_csv, variogram  # noqa: E402
from .errors import ConfigError, DataError, HsgdlmError  # noqa: E402
from .features import StandardizedDesign, cascade_design, price_design  # noqa: E402
from .sim import SIM_ALIASES, SimResult, generate  # noqa: E402

logger = logging.getLogger("hsgdlm")


# --------------------------------------------------------------------------
# config assembly


def resolve_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.read(args.config)
    elif getattr(args, "run_dir", None) and (Path(args.run_dir) / "config.txt").exists():
        cfg = RunConfig.read(Path(args.run_dir) / "config.txt")
    else:
        cfg = RunConfig()
    pairs = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got '{item}'")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    flags = {
        "seed": "run.seed",
        "out": "run.out",
        "series": "sim.n_series",
        "days": "sim.n_days",
        "data": "data.path",
        "design": "features.design",
        "target": "features.target",
        "n_mc": "engine.n_mc",
        "warmup": "run.warmup",
    }
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            pairs[key] = value
    if getattr(args, "sim", None):
        if getattr(args, "data", None):
            raise ConfigError("--data and --sim are mutually exclusive")
        pairs["sim.generator"] = SIM_ALIASES[args.sim]
        pairs["data.path"] = None
    if getattr(args, "no_parents", False):
        pairs["parents.enabled"] = False
    if getattr(args, "no_har", False):
        pairs["features.har"] = False
    if getattr(args, "ohlc", False):
        pairs["features.ohlc"] = True
    # flag values are already typed; --set strings are parsed
    return cfg.with_overrides(pairs)


def load_panel(cfg: RunConfig) -> tuple[PricePanel, SimResult | None]:
    if cfg.data.path:
        return load_prices_csv(cfg.data.path), None
    sim = generate(cfg.sim_spec())
    return sim.panel, sim


def build_design(cfg: RunConfig, panel: PricePanel, sim: SimResult | None) -> StandardizedDesign:
    f = cfg.features
    if f.design == "price":
        raw = price_design(panel, cfg.rv, har=f.har, ohlc=f.ohlc)
    else:
        if f.target == "latent":
            if sim is None or sim.latent is None:
                raise ConfigError("features.target='latent' needs a simulated har or factor panel")
            Y = sim.latent
        else:
            Y = np.column_stack([daily_log_rv(s, cfg.rv) for s in panel.series])
        raw = cascade_design(Y, panel.dates, panel.ids, har=f.har)
    return StandardizedDesign.build(raw)


# --------------------------------------------------------------------------
# subcommands


def cmd_run(cfg: RunConfig) -> int:
    from .pipeline import run_engine

    panel, sim = load_panel(cfg)
    design = build_design(cfg, panel, sim)
    res = run_engine(design, cfg.engine_config(), warmup=cfg.run.warmup, keep_states=cfg.run.keep_states)
    out = Path(cfg.run.out)
    paths = res.write(out)
    cfg.write(out / "config.txt")
    diag = res.diagnostics
    print(
        f"filtered {diag.shape[0]} days x {len(design.raw.ids)} series in {res.seconds:.1f}s; "
        f"median ESS {diag['ess'].median():.1f}, VB fallbacks {int(diag['vb_fallbacks'].sum())}"
    )
    for p in paths + [out / "config.txt"]:
        print(f"  wrote {p}")
    return 0


def _read_csv(path: Path, need: set[str]) -> pd.DataFrame:
    if not path.exists():
        raise DataError(f"missing input file {path}")
    df = pd.read_csv(path)
    if not need <= set(df.columns):
        raise DataError(f"{path}: needs columns {sorted(need)}, has {list(df.columns)}")
    df["id"] = df["id"].astype(str)
    return df


def cmd_backtest(cfg: RunConfig, args: argparse.Namespace) -> int:
    from . import signals as sig

    base = Path(args.run_dir) if args.run_dir else None
    coef_path = Path(args.coefficients) if args.coefficients else base / "coefficients.csv"
    obs_path = Path(args.observations) if args.observations else base / "observations.csv"
    coef = _read_csv(coef_path, {"date", "id", "coef_name", "value"})
    obs = _read_csv(obs_path, {"date", "id", "observed"})
    groups = sig.group_coefficients(coef, obs)
    targets = obs.pivot(index="date", columns="id", values="observed").sort_index()
    sc = cfg.signals
    lags = {kind: list(sc.lags) for kind in sc.kinds}
    selection = []
    if sc.cutoff is not None:
        for kind in sc.kinds:
            best, scores = sig.select_lag(groups.panel(kind), targets, sc.lags, cutoff=sc.cutoff)
            lags[kind] = [best]
            selection += [(kind, lag, score, lag == best) for lag, score in scores.items()]
    streams = {}
    for kind in sc.kinds:
        streams.update(sig.signal_streams(groups, [kind], lags[kind]))
    positions = sig.combine_streams(streams, sc.threshold)
    if sc.cutoff is not None:
        # score only the rows after the data used to pick the lags
        positions = positions[pd.to_datetime(positions.index) >= pd.Timestamp(sc.cutoff)]
        targets = targets[pd.to_datetime(targets.index) >= pd.Timestamp(sc.cutoff)]
    res = sig.ew_backtest(positions, targets)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    long_pos = positions.stack().rename("position").reset_index()
    long_pos.columns = ["date", "id", "position"]
    tables = {
        "positions.csv": long_pos,
        "backtest_curve.csv": res.curve,
        "backtest_series.csv": res.per_series,
        "backtest_trades.csv": res.trades,
        "backtest_summary.csv": pd.DataFrame([res.summary()]),
    }
    if selection:
        tables["lag_selection.csv"] = pd.DataFrame(selection, columns=["kind", "lag", "hit_rate", "selected"])
    for name, frame in tables.items():
        frame.to_csv(out / name, index=False, float_format="%.10g")
    summary = res.summary()
    print(
        f"hit rate {summary['hit_rate']:.4f}, final value {summary['final_value']:.4f}, "
        f"max drawdown {summary['max_drawdown']:.4f}, {int(summary['n_trades'])} trades"
    )
    print(f"  wrote {len(tables)} files to {out}")
    return 0


def cmd_metrics(cfg: RunConfig, args: argparse.Namespace) -> int:
    from . import metrics as mt

    base = Path(args.run_dir) if args.run_dir else None
    fc_path = Path(args.forecasts) if args.forecasts else base / "forecasts.csv"
    obs_path = Path(args.observations) if args.observations else base / "observations.csv"
    fc = _read_csv(fc_path, {"date", "id", "forecast_mean", "interval_lo", "interval_hi"})
    obs = _read_csv(obs_path, {"date", "id", "observed"})
    streams = {"model": fc}
    if args.baselines:
        panel, sim = load_panel(cfg)
        design = build_design(cfg, panel, sim)
        for name, frame in mt.baseline_forecasts(
            design.raw, warmup=cfg.run.warmup, mass=cfg.engine.interval_mass
        ).items():
            streams[name] = frame
        if cfg.features.design == "price":
            plain = mt.plain_sgdlm(panel, cfg.rv, cfg.engine_config(), warmup=cfg.run.warmup)
            streams["plain-sgdlm"] = plain.forecasts
    # common dates so every model is scored on the same days
    common = set(fc["date"])
    for frame in streams.values():
        common &= set(frame.dropna(subset=["forecast_mean"])["date"])
    obs = obs[obs["date"].isin(common)]
    width = mt.common_width(obs)
    reports = []
    for name, frame in streams.items():
        frame = frame[frame["date"].isin(common)].dropna(subset=["forecast_mean", "interval_lo", "interval_hi"])
        reports.append(mt.evaluate(frame, obs, model=name, target_width=width))
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.summary_row() for r in reports]).to_csv(out / "metrics_summary.csv", index=False, float_format="%.10g")
    pd.concat([r.per_series.assign(model=r.model) for r in reports], ignore_index=True).to_csv(
        out / "metrics_series.csv", index=False, float_format="%.10g"
    )
    pd.concat([r.ci_tables.assign(model=r.model) for r in reports], ignore_index=True).to_csv(
        out / "metrics_intervals.csv", index=False, float_format="%.10g"
    )
    text = mt.format_reports(reports) + f"\ncommon interval width {width:.6f}\n"
    (out / "metrics.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_variogram(cfg: RunConfig, args: argparse.Namespace) -> int:
    panel, _ = load_panel(cfg)
    lags = tuple(int(x) for x in args.lags.split(","))
    rows = []
    for s in panel.series:
        close = s.close
        ends = range(args.window - 1, len(close), args.every) if args.every else [len(close) - 1]
        for t in ends:
            try:
                v = variogram(close, rho=cfg.rv.rho, window=args.window, lags=lags, t=t)
            except DataError as exc:
                logger.info("%s at %s: %s", s.id, panel.dates[t], exc)
                continue
            date = str(pd.Timestamp(panel.dates[t]).date())
            rows += [(s.id, date, lag, val, v.status) for lag, val in zip(v.lags, v.values)]
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=["id", "date", "lag", "value", "status"])
    frame.to_csv(out / "variogram.csv", index=False, float_format="%.10g")
    print(f"{len(frame)} rows for {frame['id'].nunique()} series -> {out / 'variogram.csv'}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    res = generate(cfg.sim_spec())
    for p in res.write(cfg.run.out):
        print(f"  wrote {p}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat section.key = value file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    source = argparse.ArgumentParser(add_help=False)
    source.add_argument("--data", help="prices CSV (date,id,open,high,low,close)")
    source.add_argument("--sim", choices=sorted(SIM_ALIASES), help="simulate instead of reading data")
    source.add_argument("--series", type=int, help="number of simulated series")
    source.add_argument("--days", type=int, help="number of simulated days")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--no-parents", action="store_true", help="disable simultaneous parents")
    model.add_argument("--no-har", action="store_true", help="keep only offset and previous log-RV")
    model.add_argument("--ohlc", action="store_true", help="add open/high/low/close features")
    model.add_argument("--design", choices=["price", "cascade"])
    model.add_argument("--target", choices=["log_rv", "latent"])
    model.add_argument("--n-mc", type=int, dest="n_mc")
    model.add_argument("--warmup", type=int)

    parser = argparse.ArgumentParser(prog="hsgdlm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common, source, model], help="filter a panel and write forecasts")
    p = sub.add_parser("backtest", parents=[common], help="change-point signals and EW backtest")
    p.add_argument("--run", dest="run_dir", help="directory written by 'run'")
    p.add_argument("--coefficients")
    p.add_argument("--observations")
    p = sub.add_parser("metrics", parents=[common, source, model], help="point and interval metrics")
    p.add_argument("--run", dest="run_dir", help="directory written by 'run'")
    p.add_argument("--forecasts")
    p.add_argument("--observations")
    p.add_argument("--baselines", action="store_true", help="also score t-1, least-squares HAR and plain SGDLM")
    p = sub.add_parser("variogram", parents=[common, source], help="rescaled RV by return lag")
    p.add_argument("--window", type=int, default=180)
    p.add_argument("--lags", default="1,2,3,4,5")
    p.add_argument("--every", type=int, default=0, help="stride between evaluation dates; 0 = last date only")
    sub.add_parser("simulate", parents=[common, source], help="write a synthetic panel")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = resolve_config(args)
        if args.command in ("backtest", "metrics"):
            named = (args.forecasts if args.command == "metrics" else args.coefficients) and args.observations
            if not args.run_dir and not named:
                raise ConfigError(f"{args.command} needs --run DIR or explicit input files")
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "backtest":
            return cmd_backtest(cfg, args)
        if args.command == "metrics":
            return cmd_metrics(cfg, args)
        if args.command == "variogram":
            return cmd_variogram(cfg, args)
        return cmd_simulate(cfg)
    except HsgdlmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
