"""Forecast-quality metrics and comparator models.

Point metrics per series are the median absolute deviation, the RMSE and the
observed-on-predicted (Mincer-Zarnowitz) regression slope and R^2; panel
reports take medians across series. Interval tables filter days by the size
of the log-RV move and report how many observations fall inside the
forecast interval after all models are rescaled to a common mean width.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DataError

logger = logging.getLogger(__name__)

MIN_POINTS = 30
RIDGE = 1e-8
HAR_ERROR_WINDOW = 30
DEFAULT_QUANTILES = (0.0, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class PointMetrics:
    mad: float
    rmse: float
    r2: float
    mz: float  # NaN when the predictions have no spread
    intercept: float = float("nan")
    n: int = 0


def mz_regression(pred: np.ndarray, obs: np.ndarray) -> tuple[float, float, float]:
    """Slope, intercept and R^2 of ``obs = a + b pred``; NaN slope if ``pred`` is constant."""
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    dp = pred - pred.mean()
    sxx = float(dp @ dp)
    if sxx <= 1e-300 * max(1.0, float(pred @ pred)):
        return float("nan"), float("nan"), float("nan")
    b = float(dp @ (obs - obs.mean())) / sxx
    a = float(obs.mean() - b * pred.mean())
    resid = obs - a - b * pred
    tss = float(np.sum((obs - obs.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / tss if tss > 0 else 1.0
    return b, a, r2


def point_metrics(pred: Sequence[float], obs: Sequence[float], *, min_points: int = MIN_POINTS) -> PointMetrics:
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if pred.shape != obs.shape:
        raise DataError(f"prediction and observation lengths differ: {pred.shape} vs {obs.shape}")
    ok = ~(np.isnan(pred) | np.isnan(obs))
    pred, obs = pred[ok], obs[ok]
    if len(pred) < min_points:
        raise DataError(f"need at least {min_points} aligned points, got {len(pred)}")
    err = pred - obs
    b, a, r2 = mz_regression(pred, obs)
    return PointMetrics(
        mad=float(np.median(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err * err))),
        r2=r2,
        mz=b,
        intercept=a,
        n=int(len(pred)),
    )


# --------------------------------------------------------------------------
# intervals


def coverage(lo: np.ndarray, hi: np.ndarray, obs: np.ndarray) -> float:
    """Fraction of (non-missing) observations inside ``[lo, hi]``."""
    lo, hi, obs = (np.asarray(a, dtype=float) for a in (lo, hi, obs))
    ok = ~np.isnan(obs)
    if not ok.any():
        return float("nan")
    inside = (obs[ok] >= lo[ok]) & (obs[ok] <= hi[ok])
    return float(inside.mean())


def interval_multiplier(lo: np.ndarray, hi: np.ndarray, target_width: float) -> float:
    """Factor that makes the mean width of ``[lo, hi]`` equal ``target_width``."""
    width = np.nanmean(np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float))
    if not np.isfinite(width) or width <= 0:
        raise DataError("intervals have no positive finite width to rescale")
    return float(target_width / width)


def rescale_intervals(
    center: np.ndarray, lo: np.ndarray, hi: np.ndarray, k: float
) -> tuple[np.ndarray, np.ndarray]:
    """Stretch each interval about ``center`` by ``k`` (asymmetry kept)."""
    center = np.asarray(center, dtype=float)
    return center - k * (center - np.asarray(lo)), center + k * (np.asarray(hi) - center)


def ci_coverage(
    lo: np.ndarray,
    hi: np.ndarray,
    obs: np.ndarray,
    prev: np.ndarray,
    *,
    mode: str = "abs",
    threshold: float = 0.0,
) -> dict | None:
    """One interval-table row for days whose move ``obs - prev`` passes the filter.

    ``mode='abs'`` keeps ``|move| > threshold`` and reports the mean ``|move|``;
    ``mode='positive'`` keeps ``move > threshold`` and reports the mean move.
    Returns ``None`` when no day passes.
    """
    lo, hi, obs, prev = (np.asarray(a, dtype=float) for a in (lo, hi, obs, prev))
    move = obs - prev
    ok = ~(np.isnan(move) | np.isnan(lo) | np.isnan(hi))
    if mode == "abs":
        keep = ok & (np.abs(move) > threshold)
        size = np.abs(move[keep])
    elif mode == "positive":
        keep = ok & (move > threshold)
        size = move[keep]
    else:
        raise ValueError(f"mode must be 'abs' or 'positive', got '{mode}'")
    if not keep.any():
        logger.info("no %s moves above %.4g; row omitted", mode, threshold)
        return None
    width = hi[keep] - lo[keep]
    inside = (obs[keep] >= lo[keep]) & (obs[keep] <= hi[keep])
    return {
        "mode": mode,
        "threshold": float(threshold),
        "n": int(keep.sum()),
        "mean_move": float(size.mean()),
        "mean_size": float(np.mean(width)),
        "pct_inside": float(100.0 * inside.mean()),
    }


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    median_adv: float
    median_rmse: float
    median_r2: float
    mz_coefficient: float
    per_series: pd.DataFrame
    ci_tables: pd.DataFrame = field(default_factory=pd.DataFrame)
    model: str = "model"

    def summary_row(self) -> dict:
        return {
            "model": self.model,
            "median_adv": self.median_adv,
            "median_rmse": self.median_rmse,
            "median_r2": self.median_r2,
            "mz_coefficient": self.mz_coefficient,
        }


def _aligned(forecasts: pd.DataFrame, observations: pd.DataFrame) -> pd.DataFrame:
    df = forecasts.merge(observations, on=["date", "id"], how="inner")
    df = df.sort_values(["id", "date"]).reset_index(drop=True)
    # previous observation of the same series, for move filters
    df["previous"] = df.groupby("id")["observed"].shift(1)
    return df


def evaluate(
    forecasts: pd.DataFrame,
    observations: pd.DataFrame,
    *,
    model: str = "model",
    thresholds: Sequence[float] | None = None,
    target_width: float | None = None,
    modes: Sequence[str] = ("abs", "positive"),
) -> EvalReport:
    """Point metrics per series (medians across series) and interval tables.

    ``forecasts`` has ``date,id,forecast_mean,interval_lo,interval_hi`` and
    ``observations`` has ``date,id,observed``. When ``target_width`` is given
    the intervals are rescaled to that mean width before coverage is counted;
    by default thresholds are quantiles of ``|move|``.
    """
    df = _aligned(forecasts, observations)
    rows = []
    for sid, g in df.groupby("id", sort=True):
        try:
            pm = point_metrics(g["forecast_mean"].to_numpy(), g["observed"].to_numpy())
        except DataError as exc:
            logger.info("series %s skipped: %s", sid, exc)
            continue
        rows.append({"id": sid, "mad": pm.mad, "rmse": pm.rmse, "r2": pm.r2, "mz": pm.mz, "n": pm.n})
    per = pd.DataFrame(rows, columns=["id", "mad", "rmse", "r2", "mz", "n"])
    lo, hi = df["interval_lo"].to_numpy(float), df["interval_hi"].to_numpy(float)
    if target_width is not None:
        k = interval_multiplier(lo, hi, target_width)
        lo, hi = rescale_intervals(df["forecast_mean"].to_numpy(float), lo, hi, k)
    move = (df["observed"] - df["previous"]).abs().dropna()
    if thresholds is None:
        thresholds = [float(np.quantile(move, q)) for q in DEFAULT_QUANTILES] if len(move) else []
    table = []
    for mode in modes:
        for q in thresholds:
            row = ci_coverage(lo, hi, df["observed"], df["previous"], mode=mode, threshold=q)
            if row is not None:
                table.append(row)
    med = per.median(numeric_only=True) if len(per) else pd.Series(dtype=float)
    return EvalReport(
        median_adv=float(med.get("mad", np.nan)),
        median_rmse=float(med.get("rmse", np.nan)),
        median_r2=float(med.get("r2", np.nan)),
        mz_coefficient=float(med.get("mz", np.nan)),
        per_series=per,
        ci_tables=pd.DataFrame(table, columns=["mode", "threshold", "n", "mean_move", "mean_size", "pct_inside"]),
        model=model,
    )


def common_width(observations: pd.DataFrame, factor: float = 0.99) -> float:
    """Shared interval width just under twice the mean absolute move."""
    obs = observations.sort_values(["id", "date"])
    move = obs.groupby("id")["observed"].diff().abs().dropna()
    if move.empty:
        raise DataError("need at least two observations per series to size intervals")
    return float(factor * 2.0 * move.mean())


def format_reports(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text tables: one summary block, then intervals per model."""
    summary = pd.DataFrame([r.summary_row() for r in reports])
    parts = ["Point forecasts (medians over series)", summary.to_string(index=False, float_format="%.4f")]
    for r in reports:
        if len(r.ci_tables):
            parts += ["", f"Intervals: {r.model}", r.ci_tables.to_string(index=False, float_format="%.4f")]
    return "\n".join(parts) + "\n"


# --------------------------------------------------------------------------
# comparators


def persistence_forecast(Y: np.ndarray, *, mass: float = 0.9, window: int = HAR_ERROR_WINDOW) -> tuple[np.ndarray, ...]:
    """``pred_t = obs_{t-1}`` with a rolling-error interval; arrays are ``(T, m)``."""
    Y = np.asarray(Y, dtype=float)
    pred = np.full_like(Y, np.nan)
    pred[1:] = Y[:-1]
    lo, hi = _error_band(pred, Y, mass, window)
    return pred, lo, hi


def _error_band(pred: np.ndarray, Y: np.ndarray, mass: float, window: int) -> tuple[np.ndarray, np.ndarray]:
    """``pred +- z * sd`` of the trailing ``window`` errors strictly before each day."""
    err = pd.DataFrame(Y - pred)
    sd = err.rolling(window, min_periods=2).std().shift(1).to_numpy()
    z = stats.norm.ppf(0.5 + 0.5 * mass)
    return pred - z * sd, pred + z * sd


def har_ols_fit(X: np.ndarray, y: np.ndarray, *, name: str = "?") -> np.ndarray:
    """Least-squares coefficients, with a ``1e-8`` ridge when ``X'X`` is singular."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    A = X.T @ X
    b = X.T @ y
    return _solve_normal(A, b, name)


def _solve_normal(A: np.ndarray, b: np.ndarray, name: str) -> np.ndarray:
    try:
        if np.linalg.cond(A) < 1.0 / np.finfo(float).eps:
            return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pass
    logger.info("series %s: singular least-squares design, ridge %.0e applied", name, RIDGE)
    return np.linalg.solve(A + RIDGE * np.eye(len(A)), b)


def har_ols_forecast(
    X: np.ndarray,
    Y: np.ndarray,
    *,
    start: int = 0,
    min_obs: int | None = None,
    mass: float = 0.9,
    window: int = HAR_ERROR_WINDOW,
    ids: Sequence[str] | None = None,
) -> tuple[np.ndarray, ...]:
    """Expanding-window least squares: day ``t`` uses rows strictly before ``t``.

    ``X`` is ``(T, m, k)`` raw regressors (rows with a missing entry are
    skipped), ``Y`` is ``(T, m)``. Returns ``(pred, lo, hi)`` of shape ``(T, m)``;
    predictions start at ``start`` once ``min_obs`` (default ``2k``) rows are in.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    T, m, k = X.shape
    min_obs = 2 * k if min_obs is None else min_obs
    pred = np.full((T, m), np.nan)
    A = np.zeros((m, k, k))
    b = np.zeros((m, k))
    count = np.zeros(m, dtype=int)
    for t in range(T):
        for j in range(m):
            if t >= start and count[j] >= min_obs and not np.isnan(X[t, j]).any():
                beta = _solve_normal(A[j], b[j], ids[j] if ids is not None else str(j))
                pred[t, j] = X[t, j] @ beta
        ok = ~(np.isnan(X[t]).any(axis=1) | np.isnan(Y[t]))
        if ok.any():
            x = X[t, ok]
            A[ok] += x[:, :, None] * x[:, None, :]
            b[ok] += x * Y[t, ok][:, None]
            count[ok] += 1
    lo, hi = _error_band(pred, Y, mass, window)
    return pred, lo, hi


def panel_frame(values: np.ndarray, dates: np.ndarray, ids: Sequence[str], start: int = 0) -> pd.DataFrame:
    """Long ``date,id,value`` frame of a ``(T, m)`` array from row ``start`` on."""
    T, m = values.shape
    d = pd.to_datetime(np.asarray(dates)[start:]).strftime("%Y-%m-%d").to_numpy()
    return pd.DataFrame(
        {"date": np.repeat(d, m), "id": np.tile(np.asarray(ids, dtype=object), T - start), "value": values[start:].reshape(-1)}
    )


def forecast_frame(
    pred: np.ndarray, lo: np.ndarray, hi: np.ndarray, dates: np.ndarray, ids: Sequence[str], start: int = 0
) -> pd.DataFrame:
    out = panel_frame(pred, dates, ids, start).rename(columns={"value": "forecast_mean"})
    out["interval_lo"] = panel_frame(lo, dates, ids, start)["value"].to_numpy()
    out["interval_hi"] = panel_frame(hi, dates, ids, start)["value"].to_numpy()
    return out


def with_model(report: EvalReport, name: str) -> EvalReport:
    return replace(report, model=name)


def plain_sgdlm(panel, rv_cfg, engine_cfg, *, warmup: int = 250):
    """Engine run with the endogenous set ``{offset, previous log-RV}`` and no parents.

    Goes through the same calls as a ``run`` with HAR features and parents
    switched off, so the two streams are bit-identical.
    """
    from .features import StandardizedDesign, price_design
    from .pipeline import run_engine

    design = StandardizedDesign.build(price_design(panel, rv_cfg, har=False, ohlc=False))
    cfg = replace(engine_cfg, parents=replace(engine_cfg.parents, enabled=False))
    return run_engine(design, cfg, warmup=warmup)


def baseline_forecasts(raw, *, warmup: int = 250, mass: float = 0.9) -> dict[str, pd.DataFrame]:
    """Persistence and expanding least-squares HAR streams from a raw design.

    The least-squares model uses the offset and the ``rv_*`` columns.
    """
    cols = [c for c, name in enumerate(raw.names) if name == "offset" or name.startswith("rv_")]
    pers = persistence_forecast(raw.Y, mass=mass)
    har = har_ols_forecast(raw.X[:, :, cols], raw.Y, start=warmup, mass=mass, ids=raw.ids)
    return {
        "t-1": forecast_frame(*pers, raw.dates, raw.ids, warmup),
        "har-ols": forecast_frame(*har, raw.dates, raw.ids, warmup),
    }
