"""Day-by-day driver: standardized design in, tidy result tables out."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .engine import Engine, EngineConfig
from .errors import ConfigError
from .features import StandardizedDesign

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    forecasts: pd.DataFrame
    coefficients: pd.DataFrame
    diagnostics: pd.DataFrame
    parents: pd.DataFrame
    observations: pd.DataFrame
    scales: pd.DataFrame
    retired: pd.DataFrame
    states: pd.DataFrame | None = None
    engine: Engine | None = None
    seconds: float = 0.0

    def write(self, out: str | Path) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name in ("forecasts", "coefficients", "diagnostics", "parents", "observations", "scales"):
            path = out / f"{name}.csv"
            getattr(self, name).to_csv(path, index=False, float_format="%.10g")
            written.append(path)
        if self.states is not None:
            path = out / "states.csv"
            self.states.to_csv(path, index=False, float_format="%.10g")
            written.append(path)
        return written


def _fmt_dates(dates: np.ndarray) -> np.ndarray:
    return pd.to_datetime(dates).strftime("%Y-%m-%d").to_numpy()


def run_engine(
    design: StandardizedDesign,
    cfg: EngineConfig,
    *,
    warmup: int = 250,
    keep_states: bool = False,
) -> RunResult:
    """Filter the whole panel. Forecasts are emitted from day ``warmup`` on.

    Days before ``warmup`` only feed the expanding scales. Forecast means and
    intervals are reported in raw target units; coefficients and states stay
    in the standardized units the model works in (see ``scales``).
    """
    raw = design.raw
    T, m, k = raw.X.shape
    if warmup < 0 or warmup >= T:
        raise ConfigError(f"run.warmup={warmup} must lie in [0, {T})")
    engine = Engine(m, raw.names, cfg, raw.ids)
    dates = _fmt_dates(raw.dates)
    ids = np.asarray(raw.ids, dtype=object)
    start = time.perf_counter()

    fc_rows, coef_rows, diag_rows, parent_rows, retired_rows, state_rows = [], [], [], [], [], []
    for t in range(warmup, T):
        out = engine.step(t, design.X[t], design.Y[t])
        mu, sd = design.y_scales.mean[t], design.y_scales.sd[t]
        f = out.forecast
        fc_rows.append(
            pd.DataFrame(
                {
                    "date": dates[t],
                    "id": ids,
                    "forecast_mean": mu + sd * f.mean,
                    "interval_lo": mu + sd * f.lo,
                    "interval_hi": mu + sd * f.hi,
                    "entropy": out.entropy,
                    "ess": out.ess,
                }
            )
        )
        for j, post in enumerate(out.posteriors):
            names = out.coef_names[j]
            coef_rows.append((t, j, names, post.m))
            if keep_states:
                state_rows.append((t, j, names, post.m, np.diag(post.C).copy(), post.n, post.s))
        diag_rows.append(
            (dates[t], out.entropy, out.ess, out.tau, f.rejections, out.vb_fallbacks, out.min_eig, out.n_coupled)
        )
        for child, par, tag, score in out.parent_rows:
            parent_rows.append((dates[t], raw.ids[child], raw.ids[par], tag, score))
        for child, par, mean in out.retired:
            retired_rows.append((dates[t], raw.ids[child], raw.ids[par], mean))
    seconds = time.perf_counter() - start
    logger.info("filtered %d days x %d series in %.1fs", T - warmup, m, seconds)

    coef = _long_coefficients(coef_rows, dates, raw.ids)
    states = None
    if keep_states:
        states = pd.DataFrame(
            [
                (dates[t], raw.ids[j], name, mv, cv, n, s)
                for t, j, names, mvec, cvec, n, s in state_rows
                for name, mv, cv in zip(names, mvec, cvec)
            ],
            columns=["date", "id", "coef_name", "m", "c_diag", "n", "s"],
        )
    span = slice(warmup, T)
    obs = pd.DataFrame(
        {
            "date": np.repeat(dates[span], m),
            "id": np.tile(ids, T - warmup),
            "observed": raw.Y[span].reshape(-1),
        }
    )
    scales = pd.DataFrame(
        {
            "date": np.repeat(dates[span], m),
            "id": np.tile(ids, T - warmup),
            "target_mean": design.y_scales.mean[span].reshape(-1),
            "target_sd": design.y_scales.sd[span].reshape(-1),
            **{
                f"{name}_mean": design.x_scales.mean[span, :, c].reshape(-1)
                for c, name in enumerate(raw.names)
                if c > 0
            },
            **{
                f"{name}_sd": design.x_scales.sd[span, :, c].reshape(-1)
                for c, name in enumerate(raw.names)
                if c > 0
            },
        }
    )
    return RunResult(
        forecasts=pd.concat(fc_rows, ignore_index=True),
        coefficients=coef,
        diagnostics=pd.DataFrame(
            diag_rows,
            columns=["date", "entropy", "ess", "tau", "rejections", "vb_fallbacks", "min_eig", "n_coupled"],
        ),
        parents=pd.DataFrame(parent_rows, columns=["date", "child_id", "parent_id", "set", "score"]),
        observations=obs,
        scales=scales,
        retired=pd.DataFrame(retired_rows, columns=["date", "child_id", "parent_id", "final_mean"]),
        states=states,
        engine=engine,
        seconds=seconds,
    )


def _long_coefficients(rows, dates, ids) -> pd.DataFrame:
    lens = [len(r[3]) for r in rows]
    total = int(np.sum(lens))
    date_col = np.empty(total, dtype=object)
    id_col = np.empty(total, dtype=object)
    name_col = np.empty(total, dtype=object)
    val_col = np.empty(total)
    pos = 0
    for (t, j, names, vals), n in zip(rows, lens):
        date_col[pos : pos + n] = dates[t]
        id_col[pos : pos + n] = ids[j]
        name_col[pos : pos + n] = names
        val_col[pos : pos + n] = vals
        pos += n
    return pd.DataFrame({"date": date_col, "id": id_col, "coef_name": name_col, "value": val_col})
