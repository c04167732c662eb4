"""Coefficient groups, change-point signals and equal-weighted backtests.

Coefficient trajectories emitted by the engine are summed in absolute value
into economic groups per series and day: ``rv`` (log realized variance at
each scale), ``lev`` (leverage terms) and ``core`` (current parents). A
change-point signal compares a group value with its value ``l`` days earlier
and is held until the next sampling time. Signals are summed across streams
into positions that are scored against the next move of the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, LookaheadError

logger = logging.getLogger(__name__)

GROUPS = ("rv", "lev", "core")
DEFAULT_LAGS = (1, 2, 5, 10, 20)
DEADBAND_FRAC = 0.01
DEADBAND_WINDOW = 250

# prefixes that are recognized but do not belong to any summed group
_IGNORED = ("offset", "ohlc_", "up:", "down:")


def coefficient_group(name: str) -> str | None:
    """Group of a coefficient name, ``None`` for known names outside the groups."""
    if name.startswith("rv_"):
        return "rv"
    if name.startswith("lev_"):
        return "lev"
    if name.startswith("core:"):
        return "core"
    if name == "offset" or any(name.startswith(p) for p in _IGNORED[1:]):
        return None
    raise DataError(f"unknown coefficient tag '{name}'")


@dataclass
class CoefficientGroups:
    """Per-series group values (``series``: index (date, id), columns rv/lev/core)
    plus market sums and the market log-RV (equal-weighted mean over series)."""

    series: pd.DataFrame
    market: pd.DataFrame
    market_logrv: pd.Series | None = None

    def panel(self, group: str) -> pd.DataFrame:
        """``(dates x ids)`` frame of one group, or of ``spread`` = core - rv."""
        if group == "spread":
            return self.panel("core") - self.panel("rv")
        if group not in GROUPS:
            raise KeyError(f"unknown group '{group}'")
        return self.series[group].unstack("id").sort_index()


def group_coefficients(coefficients: pd.DataFrame, observations: pd.DataFrame | None = None) -> CoefficientGroups:
    """Sum ``|value|`` per group from a long ``date,id,coef_name,value`` dump."""
    need = {"date", "id", "coef_name", "value"}
    if not need <= set(coefficients.columns):
        raise DataError(f"coefficient dump needs columns {sorted(need)}")
    names = coefficients["coef_name"].astype(str)
    mapping = {n: coefficient_group(n) for n in names.unique()}
    grp = names.map(mapping)
    keep = grp.notna()
    df = pd.DataFrame(
        {
            "date": coefficients["date"][keep],
            "id": coefficients["id"][keep],
            "group": grp[keep],
            "abs": coefficients["value"][keep].abs(),
        }
    )
    series = df.pivot_table(index=["date", "id"], columns="group", values="abs", aggfunc="sum", fill_value=0.0)
    # every (date, id) present in the dump gets a row, even if all its terms are ignored
    full = pd.MultiIndex.from_frame(coefficients[["date", "id"]].drop_duplicates()).sort_values()
    series = series.reindex(index=full, columns=list(GROUPS), fill_value=0.0).fillna(0.0)
    series.columns.name = None
    market = series.groupby(level="date").sum()
    logrv = None
    if observations is not None:
        logrv = observations.groupby("date")["observed"].mean()
    return CoefficientGroups(series, market, logrv)


# --------------------------------------------------------------------------
# change points


def _trailing_iqr(values: np.ndarray, window: int) -> np.ndarray:
    s = pd.Series(values)
    roll = s.rolling(window, min_periods=1)
    return (roll.quantile(0.75) - roll.quantile(0.25)).to_numpy()


def change_point(
    x: Sequence[float] | np.ndarray | pd.Series,
    lag: int,
    *,
    deadband: float | None = None,
    window: int = DEADBAND_WINDOW,
) -> np.ndarray:
    """Held sign of ``x[t] - x[t - lag]`` sampled every ``lag`` days.

    Sampling times are ``lag, 2 lag, ...``; the value is held until the next
    one and is 0 before the first. A difference whose magnitude is below the
    dead-band maps to 0. By default the dead-band is 1% of the interquartile
    range of the trailing ``window`` lag-differences, so it scales with the
    series and a steady trend still counts as a move. Missing values give 0.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    x = np.asarray(x, dtype=float)
    T = len(x)
    out = np.zeros(T, dtype=np.int8)
    if T <= lag:
        return out
    diff = np.full(T, np.nan)
    diff[lag:] = x[lag:] - x[:-lag]
    if deadband is None:
        band = DEADBAND_FRAC * _trailing_iqr(diff, window)
        band = np.nan_to_num(band, nan=0.0)
    else:
        band = np.full(T, float(deadband))
    current = 0
    for t in range(lag, T):
        if (t - lag) % lag == 0:
            d = diff[t]
            if np.isnan(d) or abs(d) < band[t] or d == 0:
                current = 0
            else:
                current = 1 if d > 0 else -1
        out[t] = current
    return out


def change_point_panel(panel: pd.DataFrame, lag: int, **kw) -> pd.DataFrame:
    """:func:`change_point` applied to every column of a ``(dates x ids)`` frame."""
    return pd.DataFrame(
        {c: change_point(panel[c].to_numpy(), lag, **kw) for c in panel.columns}, index=panel.index
    )


def spread_signal(groups: CoefficientGroups, lag: int, **kw) -> pd.DataFrame:
    """Change points of the exogenous-minus-endogenous spread ``core - rv``."""
    return change_point_panel(groups.panel("spread"), lag, **kw)


def signal_streams(
    groups: CoefficientGroups,
    kinds: Iterable[str] = ("rv", "lev", "core", "spread"),
    lags: Iterable[int] = DEFAULT_LAGS,
    **kw,
) -> dict[tuple[str, int], pd.DataFrame]:
    out = {}
    for kind in kinds:
        panel = groups.panel(kind)
        for lag in lags:
            out[(kind, int(lag))] = change_point_panel(panel, int(lag), **kw)
    return out


def combine_signals(signals: Sequence[np.ndarray] | np.ndarray, threshold: float = 0.0) -> np.ndarray:
    """``sign(S) * 1{|S| > threshold}`` with ``S`` the sum over streams (axis 0)."""
    S = np.sum(np.asarray(signals, dtype=np.int64), axis=0)
    return (np.sign(S) * (np.abs(S) > threshold)).astype(np.int8)


def combine_streams(streams: Mapping[tuple[str, int], pd.DataFrame], threshold: float = 0.0) -> pd.DataFrame:
    frames = list(streams.values())
    if not frames:
        raise ValueError("no signal streams to combine")
    base = frames[0]
    stacked = np.stack([f.reindex(index=base.index, columns=base.columns).fillna(0).to_numpy() for f in frames])
    return pd.DataFrame(combine_signals(stacked, threshold), index=base.index, columns=base.columns)


# --------------------------------------------------------------------------
# backtest


@dataclass
class PositionStream:
    """Positions in ``{-1, 0, 1}`` (dates x ids). ``asof[d]`` is the latest
    data timestamp used to decide the row dated ``d``; it defaults to ``d``."""

    positions: pd.DataFrame
    asof: pd.Series | None = None

    def asof_dates(self) -> pd.Series:
        if self.asof is None:
            return pd.Series(self.positions.index, index=self.positions.index)
        return self.asof.reindex(self.positions.index)


@dataclass
class BacktestResult:
    curve: pd.DataFrame  # date, daily_return, portfolio_value, market_logrv
    per_series: pd.DataFrame  # id, hit_rate, n_trades, mean_return
    trades: pd.DataFrame  # id, entry, exit, direction, length, pnl
    hit_rate: float
    max_drawdown: float
    median_trade_length: float

    def summary(self) -> dict[str, float]:
        return {
            "final_value": float(self.curve["portfolio_value"].iloc[-1]) if len(self.curve) else 0.0,
            "hit_rate": self.hit_rate,
            "max_drawdown": self.max_drawdown,
            "median_trade_length": self.median_trade_length,
            "n_trades": float(len(self.trades)),
        }


def _trades(pos: np.ndarray, moves: np.ndarray, dates: np.ndarray, sid: str) -> list[tuple]:
    rows = []
    t, T = 0, len(pos)
    while t < T:
        p = pos[t]
        if p == 0:
            t += 1
            continue
        start = t
        while t < T and pos[t] == p:
            t += 1
        pnl = float(np.nansum(p * moves[start:t]))
        rows.append((sid, dates[start], dates[t - 1], int(p), t - start, pnl))
    return rows


def ew_backtest(positions: PositionStream | pd.DataFrame, targets: pd.DataFrame) -> BacktestResult:
    """Equal-weighted portfolio of directional bets on the next target move.

    The row dated ``d`` is scored on ``target[next date] - target[d]``; its
    ``asof`` timestamp must be strictly before that next date.
    """
    stream = positions if isinstance(positions, PositionStream) else PositionStream(positions)
    targets = targets.sort_index()
    pos = stream.positions.reindex(columns=targets.columns)
    dates = targets.index
    nxt = pd.Series(dates[1:].tolist() + [pd.NaT], index=dates)
    asof = stream.asof_dates()
    scored = pos.index[pos.index.isin(dates)]
    if len(scored) < len(pos.index):
        raise DataError("positions dated outside the target calendar")
    move_date = nxt.reindex(scored)
    bad = move_date.notna() & (pd.to_datetime(asof.reindex(scored)) >= pd.to_datetime(move_date))
    if bad.any():
        first = scored[np.flatnonzero(bad.to_numpy())[0]]
        raise LookaheadError(f"position dated {first} uses data at or after the move it is scored on")
    moves = targets.shift(-1) - targets
    P = pos.reindex(index=dates).fillna(0).to_numpy(dtype=float)
    M = moves.to_numpy(dtype=float)
    contrib = np.where(np.isnan(M), np.nan, P * M)
    counts = np.sum(~np.isnan(contrib), axis=1)
    daily = np.nansum(contrib, axis=1) / np.maximum(counts, 1)
    curve = pd.DataFrame(
        {
            "date": dates,
            "daily_return": daily,
            "portfolio_value": np.cumsum(daily),
            "market_logrv": targets.mean(axis=1).to_numpy(),
        }
    )
    active = (P != 0) & ~np.isnan(M) & (M != 0)
    hits = active & (np.sign(P) == np.sign(np.nan_to_num(M)))
    per, trades = [], []
    for c, sid in enumerate(targets.columns):
        n_act = int(active[:, c].sum())
        per.append(
            (
                sid,
                hits[:, c].sum() / n_act if n_act else np.nan,
                n_act,
                float(np.nansum(contrib[:, c]) / n_obs) if (n_obs := int(np.sum(~np.isnan(contrib[:, c])))) else np.nan,
            )
        )
        trades += _trades(P[:, c], M[:, c], np.asarray(dates), str(sid))
    value = curve["portfolio_value"].to_numpy()
    drawdown = float(np.max(np.maximum.accumulate(np.concatenate([[0.0], value]))[1:] - value)) if len(value) else 0.0
    trade_df = pd.DataFrame(trades, columns=["id", "entry", "exit", "direction", "length", "pnl"])
    n_active = int(active.sum())
    return BacktestResult(
        curve=curve,
        per_series=pd.DataFrame(per, columns=["id", "hit_rate", "n_active", "mean_return"]),
        trades=trade_df,
        hit_rate=float(hits.sum() / n_active) if n_active else float("nan"),
        max_drawdown=drawdown,
        median_trade_length=float(trade_df["length"].median()) if len(trade_df) else 0.0,
    )


def select_lag(
    panel: pd.DataFrame,
    targets: pd.DataFrame,
    lags: Iterable[int] = DEFAULT_LAGS,
    cutoff: str | pd.Timestamp | None = None,
    **kw,
) -> tuple[int, dict[int, float]]:
    """Lag whose change-point signal on ``panel`` has the best hit rate on
    ``targets`` using only rows dated before ``cutoff``. Ties go to the longer lag."""
    if cutoff is not None:
        keep = pd.to_datetime(panel.index) < pd.Timestamp(cutoff)
        panel, targets = panel[keep], targets[pd.to_datetime(targets.index) < pd.Timestamp(cutoff)]
    scores = {}
    for lag in lags:
        if len(panel) < 2:
            scores[int(lag)] = float("nan")
            continue
        sig = change_point_panel(panel, int(lag), **kw)
        scores[int(lag)] = ew_backtest(sig, targets.reindex(index=panel.index, columns=sig.columns)).hit_rate
    finite = {k: v for k, v in scores.items() if np.isfinite(v)}
    if not finite:
        raise DataError("no data before the cutoff to select a lag")
    best = max(finite, key=lambda k: (finite[k], k))
    logger.info("selected lag %d (hit rates %s)", best, {k: round(v, 4) for k, v in scores.items()})
    return best, scores
