from __future__ import annotations

import json

import numpy as np
import pytest

from hsgdlm import rng as rngmod
from hsgdlm.errors import ConfigError
from hsgdlm.sim import SimSpec, generate, har_path


def test_spec_validation():
    with pytest.raises(ConfigError):
        SimSpec(n_series=0)
    with pytest.raises(ConfigError):
        SimSpec(n_days=50)
    with pytest.raises(ConfigError):
        SimSpec(generator="nope")
    assert SimSpec(generator="har").generator == "har-known"


def test_seed_determinism():
    a = generate(SimSpec(n_series=3, n_days=150, seed=5, generator="factor"))
    b = generate(SimSpec(n_series=3, n_days=150, seed=5, generator="factor"))
    for sa, sb in zip(a.panel.series, b.panel.series):
        np.testing.assert_array_equal(sa.close, sb.close)
        np.testing.assert_array_equal(sa.high, sb.high)
    np.testing.assert_array_equal(a.latent, b.latent)
    c = generate(SimSpec(n_series=3, n_days=150, seed=6, generator="factor"))
    assert not np.array_equal(a.panel.series[0].close, c.panel.series[0].close)


def test_null_returns_uncorrelated():
    n_days = 1500
    res = generate(SimSpec(n_series=20, n_days=n_days, seed=3))
    R = np.diff(np.log([s.close for s in res.panel.series]), axis=1)
    C = np.corrcoef(R)
    iu = np.triu_indices_from(C, 1)
    assert np.mean(np.abs(C[iu]) < 3 / np.sqrt(n_days)) >= 0.95


def test_null_constant_vol():
    res = generate(SimSpec(n_series=2, n_days=2000, seed=1))
    for s, vol in zip(res.panel.series, res.truth["vol"]):
        r = np.diff(np.log(s.close))
        halves = np.std(r[:1000]), np.std(r[1000:])
        assert halves[0] == pytest.approx(vol, rel=0.1)
        assert halves[1] == pytest.approx(vol, rel=0.1)


def test_har_recursion_identity():
    spec = SimSpec(n_series=2, n_days=300, generator="har", har_noise=0.0, seed=2)
    res = generate(spec)
    x = res.latent[:, 0]
    bd, bw, bm = spec.har_beta
    c = res.truth["intercept"]
    for t in range(20, 300):
        assert x[t] == pytest.approx(c + bd * x[t - 1] + bw * x[t - 5 : t].mean() + bm * x[t - 20 : t].mean())


def test_har_path_noise_is_residual():
    gen = rngmod.stream(0, "t")
    x = har_path((0.4, 0.3, 0.2), -9.0, 0.1, 400, gen)
    resid = [x[t] - (-0.9 + 0.4 * x[t - 1] + 0.3 * x[t - 5 : t].mean() + 0.2 * x[t - 20 : t].mean()) for t in range(20, 400)]
    assert np.std(resid) == pytest.approx(0.1, rel=0.15)


def test_factor_driver_precedes_followers():
    res = generate(SimSpec(n_series=4, n_days=1000, generator="factor", seed=4))
    d = res.latent - res.latent.mean(axis=0)
    lead = np.corrcoef(d[:-1, 0], d[1:, 1])[0, 1]
    lag = np.corrcoef(d[1:, 0], d[:-1, 1])[0, 1]
    assert lead > lag
    assert res.truth["driver"] == "S000"


def test_write(tmp_path):
    res = generate(SimSpec(n_series=2, n_days=120, generator="har"))
    paths = res.write(tmp_path)
    assert [p.name for p in paths] == ["prices.csv", "truth.json", "latent.csv"]
    assert json.loads(paths[1].read_text())["spec"]["n_series"] == 2


def test_rng_streams_independent_of_order():
    a = rngmod.stream(1, 5, 2).standard_normal(3)
    rngmod.stream(1, 5, 3).standard_normal(100)
    b = rngmod.stream(1, 5, 2).standard_normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, rngmod.stream(1, 2, 5).standard_normal(3))
    with pytest.raises(ValueError):
        rngmod.stream(1, -1)
