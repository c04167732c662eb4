"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the criterion lines are
repeated in the terminal summary. ``-m "not slow"`` skips the long runs.
"""

from __future__ import annotations

import time
import warnings

import numpy as np
import pandas as pd
import pytest

from hsgdlm.cli import main
from hsgdlm.data import RvConfig, batch_variogram
from hsgdlm.dlm import DiscountConfig, PriorState, evolve, forecast_one, kalman_update
from hsgdlm.engine import (
    Engine,
    EngineConfig,
    importance_weights,
    log_abs_det,
    recouple_weights,
    sample_normal_gamma,
    vb_decouple,
)
from hsgdlm.features import StandardizedDesign, cascade_design, price_design
from hsgdlm.parents import ParentConfig, ParentSets, downset_decay_matrix
from hsgdlm.pipeline import run_engine
from hsgdlm.sim import SimSpec, generate

from oracles import batch_normal_gamma, dense_logdet

RESULTS: dict[int, str] = {}
BURN_IN = 250  # engine days discarded before scoring coefficient paths


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def _endo(name: str) -> bool:
    return ":" not in name


def _post_burn_in(coef: pd.DataFrame) -> pd.DataFrame:
    dates = np.sort(coef["date"].unique())[BURN_IN:]
    return coef[coef["date"].isin(dates)]


# ---- 1. null environment


@pytest.fixture(scope="module")
def null_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("null")
    start = time.perf_counter()
    code = main(["run", "--sim", "null", "--series", "30", "--days", "1500", "--out", str(out)])
    seconds = time.perf_counter() - start
    assert code == 0
    return out, seconds


@pytest.mark.slow
def test_criterion_01_null_environment(null_run):
    out, seconds = null_run
    coef = _post_burn_in(pd.read_csv(out / "coefficients.csv"))
    coef["abs"] = coef["value"].abs()
    coef["exo"] = ~coef["coef_name"].map(_endo)
    n_days = coef["date"].nunique()
    # summed |coefficients| per series and day, then the time mean per series
    exo = coef[coef.exo].groupby("id")["abs"].sum() / n_days
    endo = coef[~coef.exo].groupby("id")["abs"].sum() / n_days
    exo = exo.reindex(endo.index, fill_value=0.0)
    ratio = exo.mean() / endo.mean()
    endo_means = coef[~coef.exo].groupby(["id", "coef_name"])["value"].mean().abs().unstack()
    best = (endo_means.idxmax(axis=1) == "rv_1").mean()
    ok = ratio < 0.1 and best >= 0.8 and seconds < 300
    report(1, ok, f"exo/endo ratio {ratio:.4f} (<0.1), rv_1 largest in {best:.0%} of series (>=80%), {seconds:.0f}s (<300s)")


@pytest.mark.slow
def test_null_parent_occupancy_stays_low(null_run):
    # no series should hold a permanent core slot when nothing is connected
    out, _ = null_run
    par = pd.read_csv(out / "parents.csv")
    core = _post_burn_in(par[par["set"] == "core"])
    n_days = core["date"].nunique() or 1
    occupancy = core.groupby(["child_id", "parent_id"])["date"].nunique() / n_days
    assert occupancy.max() < 0.30


# ---- 2. conjugacy


def test_criterion_02_conjugacy():
    rng = np.random.default_rng(2)
    T = 200
    F = rng.standard_normal((T, 1)) + 1.0
    y = 0.7 * F[:, 0] + 0.4 * rng.standard_normal(T)
    prior = PriorState(np.array([0.1]), np.array([[2.0]]), 3.0, 0.5)
    m0, C0, n0, s0 = prior.a, prior.R, prior.r, prior.s
    cfg = DiscountConfig(1.0, 1.0, 1.0)
    for t in range(T):
        post = kalman_update(prior, F[t], y[t])
        prior = evolve(post, None, cfg, 1)
    m, C, n, s = batch_normal_gamma(F, y, m0, C0, n0, s0)
    rel = max(
        abs(post.m[0] - m[0]) / abs(m[0]),
        abs(post.C[0, 0] - C[0, 0]) / abs(C[0, 0]),
        abs(post.n - n) / n,
        abs(post.s - s) / s,
    )
    report(2, rel < 1e-8, f"max relative error on (m, C, n, s) {rel:.2e} (<1e-8)")


# ---- 3. variational self-consistency


def test_criterion_03_vb_self_consistency():
    rng = np.random.default_rng(3)
    N = 5000
    m = np.array([0.8, -1.2, 2.0])
    C = np.array([[0.5, 0.2, 0.1], [0.2, 0.4, 0.15], [0.1, 0.15, 0.3]])
    n, s = 20.0, 1.5
    theta, lam = sample_normal_gamma(m, C, n, s, N, rng)
    res = vb_decouple(theta, lam, np.full(N, 1.0 / N), n_prev=n)
    errs = {
        "m": np.linalg.norm(res.state.m - m) / np.linalg.norm(m),
        "C": np.linalg.norm(res.state.C - C) / np.linalg.norm(C),
        "n": abs(res.state.n - n) / n,
        "s": abs(res.state.s - s) / s,
    }
    tol = 5 / np.sqrt(N)
    ok = max(errs.values()) < tol and res.residual < 1e-10
    detail = ", ".join(f"{k} {v:.4f}" for k, v in errs.items())
    report(3, ok, f"relative errors {detail} (<{tol:.4f}), root residual {res.residual:.1e} (<1e-10)")


# ---- 4. recoupling identities


def test_criterion_04_recoupling_identities():
    rng = np.random.default_rng(4)
    zero = recouple_weights(np.zeros((100, 6, 6)))
    uniform_ok = np.array_equal(zero.weights, np.full(100, 0.01)) and zero.entropy == 0.0
    log_w = np.full(100, -np.inf)
    log_w[17] = 0.0
    point_ok = importance_weights(log_w).entropy == np.log(100)
    worst = 0.0
    for _ in range(100):
        m, n = 10, 4
        parents = {j: [i for i in range(m) if i != j and rng.random() < 0.3] for j in range(m)}
        rows = {j: rng.standard_normal((n, len(ps))) for j, ps in parents.items()}
        got = log_abs_det(rows, parents, m, n)
        for d in range(n):
            M = np.eye(m)
            for j, ps in parents.items():
                M[j, ps] -= rows[j][d]
            want = dense_logdet(M)
            worst = max(worst, abs(np.exp(got[d] - want) - 1.0))
    ok = uniform_ok and point_ok and worst < 1e-8
    report(
        4,
        ok,
        f"zero Gamma uniform with H=0: {uniform_ok}, point mass H=log N: {point_ok}, "
        f"worst |det| relative error {worst:.1e} over 400 draws (<1e-8)",
    )


# ---- 5. calibration


def test_criterion_05_calibration():
    rng = np.random.default_rng(5)
    T, m = 5000, 2
    # a stationary precision keeps the self-generated scale bounded; under
    # beta_lambda < 1 it is a multiplicative random walk and a few huge-scale
    # days dominate the slope estimate
    discount = DiscountConfig(delta_phi=0.99, delta_gamma=0.95, beta_lambda=1.0)
    cfg = EngineConfig(discount=discount, parents=ParentConfig(enabled=False), n_mc=50)
    eng = Engine(m, ["offset", "x"], cfg)
    eng.priors = [PriorState(np.array([0.0, 1.0]), 0.1 * np.eye(2), 10.0, 1.0) for _ in range(m)]
    means, ys, inside = [], [], []
    for t in range(T):
        X = np.column_stack([np.ones(m), rng.standard_normal(m)])
        y = np.empty(m)
        for j in range(m):
            fc = forecast_one(eng.priors[j], X[j])
            y[j] = fc.mean + np.sqrt(fc.scale) * rng.standard_t(fc.dof)
        out = eng.step(t, X, y)
        f = out.forecast
        means.append(f.mean)
        ys.append(y)
        inside.append((f.lo <= y) & (y <= f.hi))
    cover = float(np.mean(inside))
    slope = np.polyfit(np.concatenate(means), np.concatenate(ys), 1)[0]
    ok = 0.87 <= cover <= 0.93 and 0.95 <= slope <= 1.05
    report(5, ok, f"90% interval coverage {cover:.3f} in [0.87, 0.93], MZ slope {slope:.3f} in [0.95, 1.05]")


# ---- 6. HAR recovery


@pytest.mark.slow
def test_criterion_06_har_recovery():
    res = generate(SimSpec(n_series=5, n_days=2000, generator="har-known"))
    design = StandardizedDesign.build(cascade_design(res.latent, res.panel.dates, res.panel.ids))
    cfg = EngineConfig(discount=DiscountConfig(delta_phi=1.0))
    out = run_engine(design, cfg)
    coef = out.coefficients
    coef = coef[coef["coef_name"].map(_endo)]
    wide = coef.pivot_table(index=["date", "id"], columns="coef_name", values="value")
    wide = wide[design.raw.names]
    day = {d: t for t, d in enumerate(pd.to_datetime(design.raw.dates).strftime("%Y-%m-%d"))}
    col = {sid: j for j, sid in enumerate(design.raw.ids)}
    rows = []
    for (date, sid), values in wide.iterrows():
        t = day[date]
        if t >= 1000:
            rows.append((sid, *design.raw_coefficients(t, col[sid], values.to_numpy())[1:]))
    est = pd.DataFrame(rows, columns=["id", "rv_1", "rv_5", "rv_20"]).groupby("id").mean()
    err = (est - np.array(res.spec.har_beta)).abs()
    worst = float(err.to_numpy().max())
    report(6, worst < 0.15, f"worst |posterior mean - truth| over 5 series x 3 coefficients {worst:.3f} (<0.15)")


# ---- 7. variogram


def test_criterion_07_variogram():
    rng = np.random.default_rng(7)
    n_paths, window, rho = 10_000, 180, 0.98
    vol = rng.uniform(0.01, 0.03, size=(n_paths, 1))
    iid = np.cumsum(vol * rng.standard_normal((n_paths, window)), axis=1)
    flat = batch_variogram(iid, rho).mean(axis=0)
    dev = float(np.max(np.abs(flat - 1.0)))
    phi = -0.5
    e = rng.standard_normal((n_paths, window))
    r = np.empty_like(e)
    r[:, 0] = e[:, 0]
    for t in range(1, window):
        r[:, t] = phi * r[:, t - 1] + e[:, t]
    mr = batch_variogram(np.cumsum(0.01 * r, axis=1), rho)
    below = float(np.mean(mr[:, 4] < mr[:, 0]))
    ok = dev < 0.05 and below >= 0.95
    report(7, ok, f"i.i.d. max |mean RV_l - 1| {dev:.4f} (<0.05), mean-reverting RV_5 < RV_1 in {below:.1%} (>=95%)")


# ---- 8. down-set decay


def test_criterion_08_downset_decay():
    dT = 10
    factors = [downset_decay_matrix(ParentSets(down={3: l}), dT, 1)[-1] for l in range(1, dT + 1)]
    sequence_ok = all(f > 0 for f in factors[:-1]) and factors[-1] == 0.0
    # in the engine, every retired parent's prior mean must be exactly zero at expiry
    res = generate(SimSpec(n_series=6, n_days=450, generator="factor-driven", seed=8))
    design = StandardizedDesign.build(cascade_design(res.latent, res.panel.dates, res.panel.ids))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = run_engine(design, EngineConfig(n_mc=100, parents=ParentConfig(dT=dT)), warmup=150)
    retired = out.retired
    coef = out.coefficients
    decaying = coef[coef["coef_name"].str.startswith("down:")]["value"]
    engine_ok = len(retired) > 0 and bool((retired["final_mean"] == 0.0).all()) and (decaying != 0).any()
    report(
        8,
        sequence_ok and engine_ok,
        f"decay factors {[round(float(f), 3) for f in factors]} end at 0: {sequence_ok}; "
        f"{len(retired)} engine retirements all exactly 0: {engine_ok}",
    )


# ---- 9. anti-lookahead replay


def _replay_identical(panel_days: int, cut: int, build) -> bool:
    full = build(panel_days)
    part = build(cut)
    n = len(part.forecasts)
    same_fc = full.forecasts.iloc[:n].reset_index(drop=True).equals(part.forecasts)
    m = len(part.coefficients)
    same_coef = full.coefficients.iloc[:m].reset_index(drop=True).equals(part.coefficients)
    return bool(same_fc and same_coef and n > 0)


def test_criterion_09_replay():
    spec = SimSpec(n_series=5, n_days=420, generator="factor-driven", seed=9)
    res = generate(spec)
    cfg = EngineConfig(n_mc=80, parents=ParentConfig(dT=5))

    def price_run(days):
        design = StandardizedDesign.build(price_design(res.panel.truncate(days), RvConfig()))
        return run_engine(design, cfg, warmup=150)

    def cascade_run(days):
        raw = cascade_design(res.latent[:days], res.panel.dates[:days], res.panel.ids)
        return run_engine(StandardizedDesign.build(raw), cfg, warmup=150)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        price_ok = _replay_identical(420, 300, price_run)
        cascade_ok = _replay_identical(420, 333, cascade_run)
    report(9, price_ok and cascade_ok, f"truncated re-runs bit-identical: price design {price_ok}, cascade design {cascade_ok}")


# ---- 10. factor-driven structure


@pytest.mark.slow
def test_criterion_10_factor_driven():
    res = generate(SimSpec(n_series=10, n_days=1500, generator="factor-driven"))
    design = StandardizedDesign.build(cascade_design(res.latent, res.panel.dates, res.panel.ids))
    out = run_engine(design, EngineConfig())
    driver = design.raw.ids[0]
    par = out.parents
    core = _post_burn_in(par[par["set"] == "core"])
    dates = np.sort(out.forecasts["date"].unique())[BURN_IN:]
    followers = core[core["parent_id"] == driver].groupby("date")["child_id"].nunique()
    frac = float((followers.reindex(dates, fill_value=0) >= 7).mean())
    own = core[core["child_id"] == driver].groupby("parent_id")["date"].nunique() / len(dates)
    occupancy = float(own.max()) if len(own) else 0.0
    ok = frac > 0.5 and occupancy <= 0.5
    report(
        10,
        ok,
        f"driver in >=7/9 follower core sets on {frac:.1%} of days (>50%), "
        f"max follower occupancy of driver core set {occupancy:.1%} (<=50%)",
    )
