"""Regression design panels and their causal standardization.

Two design families are supported:

``price``
    Target is the daily-scale log realized variance at ``t``; regressors are
    the endogenous features (log RV per scale, leverage, optional OHLC)
    observed at ``t - 1``.
``cascade``
    Target is any observed log-variance panel ``y``; regressors are
    ``(1, y_{t-1}, mean y_{t-5..t-1}, mean y_{t-20..t-1})``. Because the
    regressors are functions of past targets only, the design can be rolled
    forward with predicted values for multi-step forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PricePanel, RvConfig, daily_log_rv, endogenous_names, endogenous_paths
from .errors import DataError, UnsupportedModelError

CASCADE_WINDOWS = (1, 5, 20)


@dataclass
class DesignPanel:
    """Raw (unstandardized) design.

    ``X[t, j]`` holds the regressors available for forecasting ``Y[t, j]``;
    entries are ``NaN`` when not ready or missing. Column 0 is the offset.
    """

    kind: str
    names: list[str]
    X: np.ndarray  # (T, m, k)
    Y: np.ndarray  # (T, m)
    dates: np.ndarray
    ids: list[str]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.X.shape

    def truncate(self, n_days: int) -> "DesignPanel":
        return DesignPanel(self.kind, self.names, self.X[:n_days], self.Y[:n_days], self.dates[:n_days], self.ids)


def price_design(panel: PricePanel, cfg: RvConfig, *, har: bool = True, ohlc: bool = False) -> DesignPanel:
    names = endogenous_names(cfg, har=har, ohlc=ohlc)
    T, m = len(panel.dates), len(panel.series)
    X = np.full((T, m, len(names)), np.nan)
    Y = np.full((T, m), np.nan)
    for j, s in enumerate(panel.series):
        paths = endogenous_paths(s, cfg, har=har, ohlc=ohlc)
        X[1:, j, :] = paths[:-1]
        Y[:, j] = daily_log_rv(s, cfg)
    X[:, :, 0] = 1.0
    return DesignPanel("price", names, X, Y, panel.dates, panel.ids)


def cascade_names(har: bool = True) -> list[str]:
    windows = CASCADE_WINDOWS if har else CASCADE_WINDOWS[:1]
    return ["offset"] + [f"rv_{w}" for w in windows]


def cascade_row(history: np.ndarray, har: bool = True) -> np.ndarray:
    """Regressors from the trailing rows of ``history`` (``(n, m)``, oldest first).

    Returns ``(m, k)``; a window that is short or holds a missing value gives ``NaN``.
    """
    windows = CASCADE_WINDOWS if har else CASCADE_WINDOWS[:1]
    m = history.shape[1]
    out = np.full((m, 1 + len(windows)), np.nan)
    out[:, 0] = 1.0
    for c, w in enumerate(windows, start=1):
        if len(history) >= w:
            out[:, c] = history[-w:].mean(axis=0)
    return out


def cascade_design(
    Y: np.ndarray, dates: np.ndarray, ids: Sequence[str], *, har: bool = True
) -> DesignPanel:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DataError("cascade target must be a (T, m) array")
    names = cascade_names(har)
    T, m = Y.shape
    X = np.full((T, m, len(names)), np.nan)
    X[:, :, 0] = 1.0
    windows = CASCADE_WINDOWS if har else CASCADE_WINDOWS[:1]
    for c, w in enumerate(windows, start=1):
        if T > w:
            win = np.lib.stride_tricks.sliding_window_view(Y, w, axis=0)  # (T-w+1, m, w)
            X[w:, :, c] = win[:-1].mean(axis=-1)
    return DesignPanel("cascade", names, X, Y, np.asarray(dates), list(ids))


# --------------------------------------------------------------------------
# causal standardization


@dataclass
class ExpandingScales:
    """Mean and standard deviation of each column using data strictly before ``t``.

    Shapes follow the input: ``(T, ...)``. ``count`` is the number of present
    observations before ``t``.
    """

    mean: np.ndarray
    sd: np.ndarray
    count: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "ExpandingScales":
        values = np.asarray(values, dtype=float)
        present = ~np.isnan(values)
        # shift by the first present value of each column for numerical stability
        first = np.take_along_axis(values, present.argmax(axis=0)[None], axis=0)[0]
        first = np.where(np.isnan(first), 0.0, first)
        dev = np.where(present, values - first, 0.0)
        n = np.cumsum(present, axis=0, dtype=float)
        s1 = np.cumsum(dev, axis=0)
        s2 = np.cumsum(dev * dev, axis=0)
        zero = np.zeros((1,) + values.shape[1:])
        n = np.concatenate([zero, n[:-1]])
        s1 = np.concatenate([zero, s1[:-1]])
        s2 = np.concatenate([zero, s2[:-1]])
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_dev = np.where(n > 0, s1 / n, 0.0)
            var = np.where(n > 1, (s2 - n * mean_dev**2) / (n - 1), 0.0)
        sd = np.sqrt(np.clip(var, 0.0, None))
        return cls(mean_dev + first, sd, n)

    def transform(self, values: np.ndarray) -> np.ndarray:
        """z-scores; missing values, columns with fewer than two past
        observations and zero-spread columns map to 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (values - self.mean) / self.sd
        ok = (self.count > 1) & (self.sd > 0) & ~np.isnan(values)
        return np.where(ok, z, 0.0)

    def inverse(self, z: np.ndarray, t: int | slice | None = None) -> np.ndarray:
        mean = self.mean if t is None else self.mean[t]
        sd = self.sd if t is None else self.sd[t]
        return mean + sd * z


@dataclass
class StandardizedDesign:
    raw: DesignPanel
    X: np.ndarray
    Y: np.ndarray  # NaN where the raw target is missing
    x_scales: ExpandingScales
    y_scales: ExpandingScales

    @classmethod
    def build(cls, raw: DesignPanel) -> "StandardizedDesign":
        xs = ExpandingScales.fit(raw.X)
        ys = ExpandingScales.fit(raw.Y)
        X = xs.transform(raw.X)
        X[:, :, 0] = 1.0
        Y = np.where(np.isnan(raw.Y), np.nan, ys.transform(raw.Y))
        return cls(raw, X, Y, xs, ys)

    def raw_coefficients(self, t: int, j: int, beta: np.ndarray) -> np.ndarray:
        """Endogenous slopes mapped back to raw units: ``beta * sd_y / sd_x``."""
        k = len(self.raw.names)
        sd_y = self.y_scales.sd[t, j]
        sd_x = self.x_scales.sd[t, j, :]
        out = np.array(beta[:k], dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[1:] = np.where(sd_x[1:] > 0, beta[1:k] * sd_y / sd_x[1:], 0.0)
        shift = np.where(sd_x[1:] > 0, beta[1:k] * self.x_scales.mean[t, j, 1:] / sd_x[1:], 0.0)
        out[0] = self.y_scales.mean[t, j] + sd_y * (beta[0] - shift.sum())
        return out


class CascadeUpdater:
    """Rolls cascade regressors forward with predicted targets.

    ``history`` is the raw target panel up to and including the last observed
    day; predictions are given in standardized units and mapped back with the
    scales frozen at the forecast origin.
    """

    def __init__(self, design: StandardizedDesign, t: int, har: bool = True) -> None:
        if design.raw.kind != "cascade":
            raise UnsupportedModelError(
                "multi-step forecasts need regressors that are functions of past targets; "
                f"the '{design.raw.kind}' design is not closed under prediction"
            )
        self.design = design
        self.t = t
        self.har = har
        self.history = list(design.raw.Y[max(0, t - max(CASCADE_WINDOWS)) : t])

    def __call__(self, predicted_z: np.ndarray) -> np.ndarray:
        d = self.design
        y_raw = d.y_scales.inverse(predicted_z, self.t)
        self.history.append(y_raw)
        raw = cascade_row(np.asarray(self.history), self.har)
        xs = d.x_scales
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (raw - xs.mean[self.t]) / xs.sd[self.t]
        ok = (xs.count[self.t] > 1) & (xs.sd[self.t] > 0) & ~np.isnan(raw)
        z = np.where(ok, z, 0.0)
        z[:, 0] = 1.0
        return z


def require_closed(design: StandardizedDesign) -> None:
    if design.raw.kind != "cascade":
        raise UnsupportedModelError(
            f"the '{design.raw.kind}' design is not closed under prediction; use the cascade design"
        )
