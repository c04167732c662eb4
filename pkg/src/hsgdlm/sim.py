"""Synthetic panels with known ground truth.

Generators
----------
null-random-walk
    Independent geometric random walks, each with its own constant drift and
    volatility. No series carries information about another.
har-known
    Latent log-variance following a heterogeneous autoregression::

        x_t = c + b_d x_{t-1} + b_w mean(x_{t-5..t-1}) + b_m mean(x_{t-20..t-1}) + e_t

    with returns ``exp(x_t / 2) * z_t``.
factor-driven
    Series 0 is a driver whose latent log-variance is a slow AR(1); every
    other series is the driver's previous-day deviation times a loading plus
    i.i.d. idiosyncratic noise, so the driver leads and the followers are
    conditionally independent given it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import rng as rngmod
from .data import PricePanel, PriceSeries
from .errors import ConfigError

GENERATORS = ("null-random-walk", "har-known", "factor-driven")
SIM_ALIASES = {"null": "null-random-walk", "har": "har-known", "factor": "factor-driven"}
_BURN = 200


@dataclass(frozen=True)
class SimSpec:
    n_series: int = 30
    n_days: int = 1500
    generator: str = "null-random-walk"
    seed: int = 0
    drift_range: tuple[float, float] = (-5e-4, 5e-4)
    vol_range: tuple[float, float] = (0.01, 0.03)
    har_beta: tuple[float, float, float] = (0.4, 0.3, 0.2)
    har_mean: float = -9.0
    har_noise: float = 0.1
    factor_phi: float = 0.98
    factor_loading: float = 1.0
    factor_noise: float = 0.3
    driver_noise: float = 0.1
    factor_mean: float = -9.0

    def __post_init__(self) -> None:
        gen = SIM_ALIASES.get(self.generator, self.generator)
        object.__setattr__(self, "generator", gen)
        if gen not in GENERATORS:
            raise ConfigError(f"sim.generator must be one of {', '.join(GENERATORS)}; got '{self.generator}'")
        if self.n_series < 1:
            raise ConfigError("sim.n_series must be >= 1")
        if self.n_days < 100:
            raise ConfigError("sim.n_days must be >= 100")
        if self.vol_range[0] <= 0 or self.vol_range[1] < self.vol_range[0]:
            raise ConfigError("sim.vol_range must be positive and ordered")
        if abs(self.factor_phi) >= 1:
            raise ConfigError("sim.factor_phi must lie in (-1, 1)")
        if min(self.har_noise, self.factor_noise, self.driver_noise) < 0:
            raise ConfigError("sim noise levels must be >= 0")


@dataclass
class SimResult:
    spec: SimSpec
    panel: PricePanel
    truth: dict = field(default_factory=dict)
    latent: np.ndarray | None = None  # (T, m) log-variance, when the generator has one

    def write(self, out: str | Path) -> list[Path]:
        from .data import write_prices_csv

        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "prices.csv", out / "truth.json"]
        write_prices_csv(self.panel, paths[0])
        paths[1].write_text(json.dumps({"spec": asdict(self.spec), **self.truth}, indent=2))
        if self.latent is not None:
            lat = latent_frame(self)
            paths.append(out / "latent.csv")
            lat.to_csv(paths[-1], index=False, float_format="%.10g")
        return paths


def latent_frame(res: SimResult) -> pd.DataFrame:
    T, m = res.latent.shape
    return pd.DataFrame(
        {
            "date": np.repeat(pd.to_datetime(res.panel.dates).strftime("%Y-%m-%d").to_numpy(), m),
            "id": np.tile(np.asarray(res.panel.ids, dtype=object), T),
            "log_variance": res.latent.reshape(-1),
        }
    )


def trading_days(n: int) -> np.ndarray:
    return pd.bdate_range("2000-01-03", periods=n).to_numpy().astype("datetime64[D]")


def _series_id(j: int) -> str:
    return f"S{j:03d}"


def _bars(logp: np.ndarray, vol: np.ndarray, gen: np.random.Generator) -> tuple[np.ndarray, ...]:
    """Open/high/low around a close path; ``vol`` is the per-day return scale."""
    T = len(logp)
    prev = np.concatenate([[logp[0]], logp[:-1]])
    open_ = prev + 0.25 * vol * gen.standard_normal(T)
    top = np.maximum(open_, logp) + 0.5 * vol * np.abs(gen.standard_normal(T))
    bottom = np.minimum(open_, logp) - 0.5 * vol * np.abs(gen.standard_normal(T))
    return np.exp(open_), np.exp(top), np.exp(bottom)


def _prices(j: int, returns: np.ndarray, vol: np.ndarray, seed: int, dates: np.ndarray) -> PriceSeries:
    gen = rngmod.stream(seed, "bars", j)
    logp = np.log(100.0) + np.cumsum(returns)
    o, h, l = _bars(logp, vol, gen)
    return PriceSeries(_series_id(j), dates, np.exp(logp), o, h, l)


def _null(spec: SimSpec, dates: np.ndarray) -> SimResult:
    series, drift, vol = [], [], []
    for j in range(spec.n_series):
        gen = rngmod.stream(spec.seed, "null", j)
        mu = gen.uniform(*spec.drift_range)
        sig = gen.uniform(*spec.vol_range)
        r = mu + sig * gen.standard_normal(spec.n_days)
        series.append(_prices(j, r, np.full(spec.n_days, sig), spec.seed, dates))
        drift.append(mu)
        vol.append(sig)
    truth = {"generator": spec.generator, "drift": drift, "vol": vol}
    return SimResult(spec, PricePanel(dates, series), truth)


def har_path(
    beta: tuple[float, float, float], mean: float, noise: float, n: int, gen: np.random.Generator
) -> np.ndarray:
    bd, bw, bm = beta
    c = mean * (1.0 - bd - bw - bm)
    x = np.full(n + _BURN, mean)
    e = noise * gen.standard_normal(n + _BURN)
    for t in range(20, n + _BURN):
        x[t] = c + bd * x[t - 1] + bw * x[t - 5 : t].mean() + bm * x[t - 20 : t].mean() + e[t]
    return x[_BURN:]


def _har(spec: SimSpec, dates: np.ndarray) -> SimResult:
    if sum(spec.har_beta) >= 1:
        raise ConfigError("sim.har_beta must sum to less than 1 for a stationary cascade")
    T, m = spec.n_days, spec.n_series
    latent = np.empty((T, m))
    series = []
    for j in range(m):
        gen = rngmod.stream(spec.seed, "har", j)
        x = har_path(spec.har_beta, spec.har_mean, spec.har_noise, T, gen)
        latent[:, j] = x
        r = np.exp(x / 2.0) * gen.standard_normal(T)
        series.append(_prices(j, r, np.exp(x / 2.0), spec.seed, dates))
    bd, bw, bm = spec.har_beta
    truth = {
        "generator": spec.generator,
        "beta": {"rv_1": bd, "rv_5": bw, "rv_20": bm},
        "intercept": spec.har_mean * (1.0 - bd - bw - bm),
        "noise": spec.har_noise,
    }
    return SimResult(spec, PricePanel(dates, series), truth, latent)


def _factor(spec: SimSpec, dates: np.ndarray) -> SimResult:
    T, m = spec.n_days, spec.n_series
    phi, b, mu = spec.factor_phi, spec.factor_loading, spec.factor_mean
    n = T + _BURN
    eta = np.column_stack([rngmod.stream(spec.seed, "factor", j).standard_normal(n) for j in range(m)])
    driver = np.zeros(n)
    for t in range(1, n):
        driver[t] = phi * driver[t - 1] + spec.driver_noise * eta[t, 0]
    dev = np.empty((n, m))
    dev[:, 0] = driver
    dev[0, 1:] = spec.factor_noise * eta[0, 1:]
    dev[1:, 1:] = b * driver[:-1, None] + spec.factor_noise * eta[1:, 1:]
    latent = mu + dev[_BURN:]
    series = []
    for j in range(m):
        gen = rngmod.stream(spec.seed, "factor-returns", j)
        vol = np.exp(latent[:, j] / 2.0)
        series.append(_prices(j, vol * gen.standard_normal(T), vol, spec.seed, dates))
    truth = {
        "generator": spec.generator,
        "driver": _series_id(0),
        "loading": {_series_id(j): (0.0 if j == 0 else b) for j in range(m)},
        "phi": phi,
    }
    return SimResult(spec, PricePanel(dates, series), truth, latent)


def generate(spec: SimSpec) -> SimResult:
    """Simulate ``spec``; identical specs give bit-identical output."""
    dates = trading_days(spec.n_days)
    if spec.generator == "null-random-walk":
        return _null(spec, dates)
    if spec.generator == "har-known":
        return _har(spec, dates)
    return _factor(spec, dates)
