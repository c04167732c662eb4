"""End-of-day price ingestion and realized-variance feature construction.

All realized variances use an exponential kernel whose decay is adjusted per
return frequency so that the total kernel mass is identical at every scale::

    rho_s = rho ** ((L - 1) / (L - s))
    w_i   = (1 - rho_s) * rho_s ** i,     i = 0 .. L - s - 1
    RV_t  = (1 / s) * sum_i w_i * (log p_{t-i} - log p_{t-i-s}) ** 2

A window of ``L`` prices yields ``L - s`` overlapping ``s``-day returns, so
``sum_i w_i = 1 - rho ** (L - 1)`` for every ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError

RV_FLOOR = 1e-12
OHLC_NAMES = ("ohlc_rlow", "ohlc_ch", "ohlc_cohl")
PRICE_COLUMNS = ("date", "id", "open", "high", "low", "close")


@dataclass
class PriceSeries:
    """Daily prices of one asset on a shared trading-day grid.

    Missing days carry ``NaN`` in ``close`` (and in the OHLC columns when
    present); a zero price is never used as a missing marker.
    """

    id: str
    timestamps: np.ndarray
    close: np.ndarray
    open: np.ndarray | None = None
    high: np.ndarray | None = None
    low: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps)
        self.close = np.asarray(self.close, dtype=float)
        n = len(self.timestamps)
        if self.close.shape != (n,):
            raise DataError(f"series {self.id}: close has shape {self.close.shape}, expected ({n},)")
        if n > 1 and not np.all(self.timestamps[1:] > self.timestamps[:-1]):
            raise DataError(f"series {self.id}: timestamps must be strictly increasing")
        for name in ("open", "high", "low"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (n,):
                    raise DataError(f"series {self.id}: {name} has shape {arr.shape}, expected ({n},)")
                setattr(self, name, arr)
        for name in ("close", "open", "high", "low"):
            arr = getattr(self, name)
            if arr is not None and np.any(arr[~np.isnan(arr)] <= 0):
                raise DataError(f"series {self.id}: non-positive {name} price")

    @property
    def has_ohlc(self) -> bool:
        return self.open is not None and self.high is not None and self.low is not None

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.close)

    def __len__(self) -> int:
        return len(self.close)


@dataclass
class PricePanel:
    """A set of series aligned on one date grid."""

    dates: np.ndarray
    series: list[PriceSeries]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.series]

    def truncate(self, n_days: int) -> "PricePanel":
        cut = []
        for s in self.series:
            cut.append(
                PriceSeries(
                    s.id,
                    s.timestamps[:n_days],
                    s.close[:n_days],
                    None if s.open is None else s.open[:n_days],
                    None if s.high is None else s.high[:n_days],
                    None if s.low is None else s.low[:n_days],
                )
            )
        return PricePanel(self.dates[:n_days], cut)


@dataclass(frozen=True)
class RvConfig:
    rho: float = 0.98
    window: int = 40
    scales: tuple[int, ...] = (1, 5, 20)

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise DataError(f"rv.rho must lie in (0, 1), got {self.rho}")
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales or any(s <= 0 for s in scales):
            raise DataError("rv.scales must be positive")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise DataError("rv.scales must be strictly increasing")
        if self.window <= max(scales):
            raise DataError(f"rv.window ({self.window}) must exceed the largest scale ({max(scales)})")


@dataclass
class SeriesFeatures:
    """Regression inputs of one series at one time step."""

    rv: dict[int, float]
    lev: dict[int, tuple[float, float]]
    ohlc: tuple[float, float, float] | None = None
    parent_rv: np.ndarray = field(default_factory=lambda: np.zeros(0))
    missing: bool = False
    offset: float = 1.0

    def names(self) -> list[str]:
        out = ["offset"] + [f"rv_{s}" for s in self.rv]
        for s in self.lev:
            out += [f"lev_{s}_pos", f"lev_{s}_neg"]
        if self.ohlc is not None:
            out += list(OHLC_NAMES)
        return out

    def endogenous(self) -> np.ndarray:
        vals = [self.offset, *self.rv.values()]
        for pos, neg in self.lev.values():
            vals += [pos, neg]
        if self.ohlc is not None:
            vals += list(self.ohlc)
        return np.asarray(vals, dtype=float)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.endogenous(), np.asarray(self.parent_rv, dtype=float)])


# --------------------------------------------------------------------------
# returns and kernels


def log_returns(series: PriceSeries | np.ndarray, lag: int = 1) -> np.ndarray:
    """``log p_t - log p_{t-lag}``; ``NaN`` where either endpoint is missing."""
    close = series.close if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    if lag < 1:
        raise DataError(f"lag must be >= 1, got {lag}")
    if np.any(close[~np.isnan(close)] <= 0):
        raise DataError("non-positive price")
    logp = np.log(close)
    out = np.full(logp.shape, np.nan)
    out[lag:] = logp[lag:] - logp[:-lag]
    return out


def scale_decay(rho: float, window: int, scale: int) -> float:
    return rho ** ((window - 1) / (window - scale))


def kernel_weights(rho: float, window: int, scale: int) -> np.ndarray:
    """Weights ``w_0 .. w_{L-s-1}``, most recent return first."""
    rs = scale_decay(rho, window, scale)
    return (1.0 - rs) * rs ** np.arange(window - scale)


def _weighted_window(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # out[t] = sum_i weights[i] * values[t - i]; NaN when the window is short or holds a NaN
    k = len(weights)
    out = np.full(values.shape, np.nan)
    if len(values) < k:
        return out
    win = np.lib.stride_tricks.sliding_window_view(values, k)
    out[k - 1 :] = win @ weights[::-1]
    return out


def realized_variance_path(series: PriceSeries, cfg: RvConfig, scale: int) -> np.ndarray:
    """Realized variance at every date; ``NaN`` while not ready."""
    r = log_returns(series, scale)
    return _weighted_window(r**2, kernel_weights(cfg.rho, cfg.window, scale)) / scale


def realized_variance(series: PriceSeries, cfg: RvConfig, scale: int, t: int) -> float | None:
    """Realized variance at index ``t``, or ``None`` when history is insufficient.

    Needs the ``L`` prices ending at ``t`` to be present.
    """
    if scale not in cfg.scales and not 0 < scale < cfg.window:
        raise DataError(f"scale {scale} incompatible with window {cfg.window}")
    lo = t - cfg.window + 1
    if lo < 0 or t >= len(series):
        return None
    logp = np.log(series.close[lo : t + 1])
    if np.any(np.isnan(logp)):
        return None
    w = kernel_weights(cfg.rho, cfg.window, scale)
    total = 0.0
    for i in range(len(w)):
        r = logp[-1 - i] - logp[-1 - i - scale]
        total += w[i] * r * r
    return total / scale


def leverage_paths(series: PriceSeries, cfg: RvConfig, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-weighted positive and negative parts of past ``scale``-day returns."""
    r = log_returns(series, scale)
    w = kernel_weights(cfg.rho, cfg.window, scale)
    pos = _weighted_window(np.where(np.isnan(r), np.nan, np.maximum(r, 0.0)), w)
    neg = _weighted_window(np.where(np.isnan(r), np.nan, np.minimum(r, 0.0)), w)
    return pos, neg


def log_rv_features(series: PriceSeries, cfg: RvConfig, t: int, *, ohlc: bool = False) -> SeriesFeatures:
    """Endogenous features of ``series`` observed at index ``t``.

    Not-ready entries (missing prices in the window, short history) are set
    to 0 and flag the features as missing. A zero realized variance on present
    prices is floored at ``RV_FLOOR`` before the log.
    """
    rv: dict[int, float] = {}
    lev: dict[int, tuple[float, float]] = {}
    missing = False
    for s in cfg.scales:
        v = realized_variance(series, cfg, s, t)
        if v is None:
            rv[s] = 0.0
            missing = True
        else:
            rv[s] = float(np.log(max(v, RV_FLOOR)))
        pos, neg = leverage_paths(series, cfg, s)
        p, n = pos[t], neg[t]
        if np.isnan(p) or np.isnan(n):
            lev[s] = (0.0, 0.0)
            missing = True
        else:
            lev[s] = (float(p), float(n))
    bar = None
    if ohlc:
        if not series.has_ohlc:
            raise DataError(f"series {series.id}: OHLC features requested but open/high/low absent")
        if t >= 1:
            bar = ohlc_features(
                (series.open[t], series.high[t], series.low[t], series.close[t]),
                (series.open[t - 1], series.high[t - 1], series.low[t - 1], series.close[t - 1]),
            )
        if bar is None or any(np.isnan(bar)):
            bar = (0.0, 0.0, 0.0)
            missing = True
    return SeriesFeatures(rv=rv, lev=lev, ohlc=bar, missing=missing)


def ohlc_features(bar: Sequence[float], prev_bar: Sequence[float]) -> tuple[float, float, float]:
    """``(r_low, CH, COHL)`` from an ``(open, high, low, close)`` bar and its predecessor."""
    o, h, lo, c = (float(v) for v in bar)
    prev_low = float(prev_bar[2])
    r_low = float(np.log(lo) - np.log(prev_low))
    rng = h - lo
    if rng <= 0:
        return r_low, 0.0, 0.0
    return r_low, (h - c) / rng - 0.5, (c - o) / rng


def ohlc_paths(series: PriceSeries) -> np.ndarray:
    """``(T, 3)`` array of OHLC features; row 0 is ``NaN``."""
    if not series.has_ohlc:
        raise DataError(f"series {series.id}: OHLC features requested but open/high/low absent")
    out = np.full((len(series), 3), np.nan)
    rng = series.high - series.low
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:, 0] = np.log(series.low[1:]) - np.log(series.low[:-1])
        ch = np.where(rng > 0, (series.high - series.close) / rng - 0.5, 0.0)
        cohl = np.where(rng > 0, (series.close - series.open) / rng, 0.0)
    out[1:, 1] = ch[1:]
    out[1:, 2] = cohl[1:]
    bad = np.isnan(rng)
    out[bad, 1:] = np.nan
    return out


def endogenous_names(cfg: RvConfig, *, har: bool = True, ohlc: bool = False) -> list[str]:
    if not har:
        return ["offset", f"rv_{cfg.scales[0]}"]
    names = ["offset"] + [f"rv_{s}" for s in cfg.scales]
    for s in cfg.scales:
        names += [f"lev_{s}_pos", f"lev_{s}_neg"]
    if ohlc:
        names += list(OHLC_NAMES)
    return names


def endogenous_paths(
    series: PriceSeries, cfg: RvConfig, *, har: bool = True, ohlc: bool = False
) -> np.ndarray:
    """``(T, k)`` raw feature values observed at each date, ``NaN`` when not ready.

    Column order matches :func:`endogenous_names`. Log realized variances are
    floored at ``RV_FLOOR``.
    """
    cols = [np.ones(len(series))]
    scales = cfg.scales if har else cfg.scales[:1]
    for s in scales:
        rv = realized_variance_path(series, cfg, s)
        cols.append(np.log(np.maximum(rv, RV_FLOOR)))
    if har:
        for s in scales:
            pos, neg = leverage_paths(series, cfg, s)
            cols += [pos, neg]
        if ohlc:
            feats = ohlc_paths(series)
            cols += [feats[:, 0], feats[:, 1], feats[:, 2]]
    return np.column_stack(cols)


def daily_log_rv(series: PriceSeries, cfg: RvConfig) -> np.ndarray:
    """Daily-scale log realized variance, ``NaN`` where not ready."""
    rv = realized_variance_path(series, cfg, cfg.scales[0])
    return np.log(np.maximum(rv, RV_FLOOR))


# --------------------------------------------------------------------------
# variogram


@dataclass(frozen=True)
class Variogram:
    lags: tuple[int, ...]
    values: np.ndarray
    status: str  # "ok" or "degenerate"


def variogram(
    series: PriceSeries | np.ndarray,
    rho: float = 0.98,
    window: int = 180,
    lags: Sequence[int] = (1, 2, 3, 4, 5),
    t: int | None = None,
) -> Variogram:
    """Realized variance per return lag over the ``window`` prices ending at ``t``,
    rescaled so the first lag equals 1.

    A flat profile is what i.i.d. returns produce; increasing or decreasing
    profiles flag trending or range-bound behaviour.
    """
    close = series.close if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    lags = tuple(int(l) for l in lags)
    if window <= max(lags):
        raise DataError(f"window ({window}) must exceed the largest lag ({max(lags)})")
    t = len(close) - 1 if t is None else t
    if t - window + 1 < 0:
        raise DataError(f"variogram needs {window} prices, have {t + 1}")
    seg = close[t - window + 1 : t + 1]
    if np.any(np.isnan(seg)):
        raise DataError("variogram window contains missing prices")
    if np.any(seg <= 0):
        raise DataError("non-positive price")
    logp = np.log(seg)
    vals = np.empty(len(lags))
    for k, lag in enumerate(lags):
        r = logp[lag:] - logp[:-lag]  # oldest first
        w = kernel_weights(rho, window, lag)[::-1]
        vals[k] = np.dot(w, r**2) / lag
    if vals[0] <= 0:
        return Variogram(lags, np.full(len(lags), np.nan), "degenerate")
    return Variogram(lags, vals / vals[0], "ok")


def batch_variogram(logp: np.ndarray, rho: float, lags: Sequence[int] = (1, 2, 3, 4, 5)) -> np.ndarray:
    """Rescaled variograms of many paths at once; ``logp`` is ``(n_paths, window)``."""
    window = logp.shape[1]
    vals = []
    for lag in lags:
        r = logp[:, lag:] - logp[:, :-lag]
        w = kernel_weights(rho, window, lag)[::-1]
        vals.append((r**2) @ w / lag)
    vals = np.column_stack(vals)
    with np.errstate(divide="ignore", invalid="ignore"):
        return vals / vals[:, :1]


# --------------------------------------------------------------------------
# CSV


def load_prices_csv(path: str | Path) -> PricePanel:
    """Read ``date,id,open,high,low,close`` rows into an aligned panel.

    Dates absent for a series become missing (``NaN``) on the union grid.
    ``open/high/low`` may be empty; OHLC is kept only if complete for a series.
    """
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read prices from {path}: {exc}") from exc
    missing_cols = [c for c in ("date", "id", "close") if c not in df.columns]
    if missing_cols:
        raise DataError(f"{path}: missing column(s) {', '.join(missing_cols)}")
    df["date"] = pd.to_datetime(df["date"], format="ISO8601")
    df["id"] = df["id"].astype(str)
    if df.duplicated(["date", "id"]).any():
        raise DataError(f"{path}: duplicate (date, id) rows")
    dates = np.sort(df["date"].unique())
    ids = list(dict.fromkeys(df["id"]))
    out = []
    for sid in ids:
        sub = df[df["id"] == sid].set_index("date").reindex(dates)
        cols = {}
        for c in ("open", "high", "low"):
            if c in sub.columns and sub[c].notna().sum() == sub["close"].notna().sum():
                cols[c] = sub[c].to_numpy(float)
            else:
                cols[c] = None
        if any(v is None for v in cols.values()):
            cols = {"open": None, "high": None, "low": None}
        out.append(PriceSeries(sid, dates.astype("datetime64[D]"), sub["close"].to_numpy(float), **cols))
    return PricePanel(dates.astype("datetime64[D]"), out)


def write_prices_csv(panel: PricePanel, path: str | Path) -> None:
    frames = []
    for s in panel.series:
        present = ~np.isnan(s.close)
        frame = pd.DataFrame(
            {
                "date": pd.to_datetime(panel.dates[present]).strftime("%Y-%m-%d"),
                "id": s.id,
                "open": s.open[present] if s.open is not None else np.nan,
                "high": s.high[present] if s.high is not None else np.nan,
                "low": s.low[present] if s.low is not None else np.nan,
                "close": s.close[present],
            }
        )
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, columns=list(PRICE_COLUMNS))


def write_feature_dump(
    path: str | Path, dates: np.ndarray, ids: Sequence[str], names: Sequence[str], values: np.ndarray
) -> None:
    """Long-format dump ``date,id,feature_name,value`` of a ``(T, m, k)`` array."""
    T, m, k = values.shape
    frame = pd.DataFrame(
        {
            "date": np.repeat(pd.to_datetime(dates).strftime("%Y-%m-%d").to_numpy(), m * k),
            "id": np.tile(np.repeat(np.asarray(ids, dtype=object), k), T),
            "feature_name": np.tile(np.asarray(names, dtype=object), T * m),
            "value": values.reshape(-1),
        }
    )
    frame.to_csv(path, index=False)
