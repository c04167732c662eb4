from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsgdlm.errors import DataError, LookaheadError
from hsgdlm.signals import (
    PositionStream,
    change_point,
    change_point_panel,
    coefficient_group,
    combine_signals,
    ew_backtest,
    group_coefficients,
    select_lag,
    signal_streams,
    spread_signal,
)


def _dump(rows):
    return pd.DataFrame(rows, columns=["date", "id", "coef_name", "value"])


# ---- groups


def test_group_tags():
    assert coefficient_group("rv_5") == "rv"
    assert coefficient_group("lev_1_neg") == "lev"
    assert coefficient_group("core:S001") == "core"
    for name in ("offset", "ohlc_ch", "up:S002", "down:S003"):
        assert coefficient_group(name) is None
    with pytest.raises(DataError):
        coefficient_group("mystery")


def test_group_examples():
    g = group_coefficients(_dump([("d1", "A", "rv_1", 0.5), ("d1", "A", "rv_5", -0.3), ("d1", "A", "offset", 9.0)]))
    assert g.series.loc[("d1", "A"), "rv"] == pytest.approx(0.8)
    assert g.series.loc[("d1", "A"), "core"] == 0.0
    z = group_coefficients(_dump([("d1", "A", "rv_1", 0.0), ("d1", "A", "core:B", 0.0)]))
    assert (z.series.to_numpy() == 0).all()


def test_groups_match_recomputation(rng):
    names = ["offset", "rv_1", "rv_5", "lev_1_pos", "lev_1_neg", "core:B", "core:C", "up:D", "down:E"]
    rows = [
        (f"2020-01-{d + 1:02d}", sid, n, rng.standard_normal())
        for d in range(5)
        for sid in ("A", "B", "C")
        for n in names
        if rng.random() < 0.8
    ]
    dump = _dump(rows)
    g = group_coefficients(dump)
    for (date, sid), row in g.series.iterrows():
        sub = dump[(dump.date == date) & (dump.id == sid)]
        for grp, prefix in (("rv", "rv_"), ("lev", "lev_"), ("core", "core:")):
            expect = sub[sub.coef_name.str.startswith(prefix)].value.abs().sum()
            assert row[grp] == pytest.approx(expect)
    np.testing.assert_allclose(g.market.to_numpy(), g.series.groupby(level="date").sum().to_numpy())
    assert (g.series.to_numpy() >= 0).all()


# ---- change points


def test_change_point_trivial():
    up = np.arange(60, dtype=float)
    for lag in (1, 2, 5, 10, 20):
        s = change_point(up, lag)
        assert np.all(s[lag:] == 1) and np.all(s[:lag] == 0)
    assert np.all(change_point(np.full(60, 3.0), 5) == 0)
    with pytest.raises(ValueError):
        change_point(up, 0)


def test_change_point_loop_oracle(rng):
    x = rng.standard_normal(300).cumsum()
    for lag in (1, 3, 20):
        band = 0.05
        got = change_point(x, lag, deadband=band)
        cur = 0
        for t in range(300):
            if t >= lag and t % lag == 0:
                d = x[t] - x[t - lag]
                cur = 0 if abs(d) < band else int(np.sign(d))
            assert got[t] == (cur if t >= lag else 0)


@given(st.lists(st.floats(-100, 100), min_size=5, max_size=80), st.floats(0.01, 1000), st.integers(1, 6))
def test_change_point_scale_invariant(x, c, lag):
    x = np.array(x)
    np.testing.assert_array_equal(change_point(x, lag), change_point(c * x, lag))


def test_missing_values_give_zero():
    x = np.arange(10, dtype=float)
    x[5] = np.nan
    s = change_point(x, 1)
    assert s[5] == 0 and s[6] == 0 and s[7] == 1


def test_spread_signal_composition(rng):
    dates = [f"2020-01-{d + 1:02d}" for d in range(25)]
    rows = []
    for i, d in enumerate(dates):
        rows += [(d, "A", "rv_1", 1.0), (d, "A", "core:B", 0.1 * i)]
        rows += [(d, "B", "rv_1", rng.random()), (d, "B", "core:A", rng.random())]
    g = group_coefficients(_dump(rows))
    sig = spread_signal(g, 2)
    assert np.all(sig["A"].to_numpy()[2:] == 1)
    expect = change_point_panel(g.panel("core") - g.panel("rv"), 2)
    pd.testing.assert_frame_equal(sig, expect)
    same = group_coefficients(_dump([(d, "A", "rv_1", 2.0) for d in dates] + [(d, "A", "core:B", 2.0) for d in dates]))
    assert (spread_signal(same, 1).to_numpy() == 0).all()


def test_signal_streams_keys():
    dates = [f"2020-02-{d + 1:02d}" for d in range(10)]
    g = group_coefficients(_dump([(d, "A", "rv_1", float(i)) for i, d in enumerate(dates)]))
    streams = signal_streams(g, ["rv", "spread"], [1, 2])
    assert set(streams) == {("rv", 1), ("rv", 2), ("spread", 1), ("spread", 2)}


# ---- combination


def test_combine_examples():
    assert combine_signals(np.ones((5, 1)), threshold=2)[0] == 1
    assert combine_signals(np.array([[1], [1], [0]]), threshold=2)[0] == 0
    assert combine_signals(np.array([[1], [-1]]))[0] == 0


@given(st.lists(st.lists(st.sampled_from([-1, 0, 1]), min_size=6, max_size=6), min_size=1, max_size=7), st.integers(0, 4))
def test_combine_brute_force_and_monotone(streams, theta):
    arr = np.array(streams)
    got = combine_signals(arr, theta)
    for t in range(arr.shape[1]):
        S = sum(row[t] for row in streams)
        assert got[t] == (np.sign(S) if abs(S) > theta else 0)
    flipped = arr.copy()
    neg = np.argwhere(flipped == -1)
    if len(neg):
        i, t = neg[0]
        flipped[i, t] = 1
        assert combine_signals(flipped, theta)[t] >= got[t]


# ---- backtest


def _targets(rng, T=50, m=3):
    idx = pd.date_range("2020-01-01", periods=T).strftime("%Y-%m-%d")
    return pd.DataFrame(rng.standard_normal((T, m)).cumsum(axis=0), index=idx, columns=list("ABC")[:m])


def test_flat_positions_flat_curve(rng):
    tg = _targets(rng)
    res = ew_backtest(pd.DataFrame(0, index=tg.index, columns=tg.columns), tg)
    assert (res.curve["portfolio_value"] == 0).all()
    assert len(res.trades) == 0


def test_oracle_positions_hit_every_time(rng):
    tg = _targets(rng)
    pos = np.sign(tg.shift(-1) - tg).fillna(0).astype(int)
    res = ew_backtest(pos, tg)
    assert res.hit_rate == 1.0
    assert (res.curve["daily_return"] >= 0).all()


def test_random_positions_have_zero_mean(rng):
    T = 10_000
    tg = _targets(rng, T, 1)
    pos = pd.DataFrame(rng.choice([-1, 1], size=(T, 1)), index=tg.index, columns=tg.columns)
    res = ew_backtest(pos, tg)
    r = res.curve["daily_return"].to_numpy()[:-1]
    assert abs(r.mean()) < 3 * r.std() / np.sqrt(T)


def test_lookahead_rejected(rng):
    tg = _targets(rng)
    pos = pd.DataFrame(1, index=tg.index, columns=tg.columns)
    asof = pd.Series(tg.index, index=tg.index).shift(-1).fillna(tg.index[-1])
    with pytest.raises(LookaheadError):
        ew_backtest(PositionStream(pos, asof), tg)
    ew_backtest(PositionStream(pos, pd.Series(tg.index, index=tg.index)), tg)


def test_positions_outside_calendar(rng):
    tg = _targets(rng)
    pos = pd.DataFrame(1, index=["1999-01-01"], columns=tg.columns)
    with pytest.raises(DataError):
        ew_backtest(pos, tg)


def test_trade_bookkeeping():
    idx = pd.date_range("2021-03-01", periods=5).strftime("%Y-%m-%d")
    tg = pd.DataFrame({"A": [0.0, 1.0, 3.0, 2.0, 2.0]}, index=idx)
    pos = pd.DataFrame({"A": [1, 1, -1, 0, 0]}, index=idx)
    res = ew_backtest(pos, tg)
    assert list(res.trades["length"]) == [2, 1]
    assert list(res.trades["pnl"]) == [3.0, 1.0]
    assert res.hit_rate == 1.0
    assert res.median_trade_length == 1.5


def test_select_lag_prefers_informative_lag():
    # target moves follow the 5-day change of the group; a linear group is informative at every lag
    idx = pd.date_range("2010-01-01", periods=200).strftime("%Y-%m-%d")
    panel = pd.DataFrame({"A": np.arange(200, dtype=float)}, index=idx)
    tg = pd.DataFrame({"A": np.arange(200, dtype=float)}, index=idx)
    best, scores = select_lag(panel, tg, [1, 5, 20], cutoff="2010-05-01")
    assert best == 20  # all lags tie at 1.0; ties go to the longer lag
    assert all(v == 1.0 for v in scores.values())
    with pytest.raises(DataError):
        select_lag(panel, tg, [1], cutoff="2009-01-01")
