from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsgdlm.config import RunConfig
from hsgdlm.errors import ConfigError


def test_defaults_follow_module_defaults():
    cfg = RunConfig()
    ec = cfg.engine_config()
    assert ec.n_mc == 500
    assert (ec.discount.delta_phi, ec.discount.delta_gamma, ec.discount.beta_lambda) == (0.99, 0.95, 0.95)
    assert (ec.parents.n_core, ec.parents.dT) == (5, 10)
    assert cfg.rv.scales == (1, 5, 20)
    assert cfg.run.warmup == 250
    assert (cfg.sim.n_series, cfg.sim.n_days) == (30, 1500)


def test_single_seed_feeds_sim_and_engine():
    cfg = RunConfig().with_overrides({"run.seed": "7"})
    assert cfg.sim_spec().seed == 7 and cfg.engine_config().seed == 7
    with pytest.raises(ConfigError, match="sim.seed"):
        RunConfig.from_text("sim.seed = 3")


def test_roundtrip_default_and_modified(tmp_path):
    cfg = RunConfig().with_overrides(
        {
            "rv.scales": "[1, 5, 10]",
            "parents.enabled": "false",
            "data.path": "prices.csv",
            "signals.cutoff": '"2005-01-01"',
            "signals.kinds": '["rv", "core"]',
            "features.design": "cascade",
            "discount.delta_phi": "1",
        }
    )
    path = tmp_path / "c.txt"
    cfg.write(path)
    assert RunConfig.read(path) == cfg
    assert RunConfig.from_text(RunConfig().to_text()) == RunConfig()
    assert cfg.discount.delta_phi == 1.0 and isinstance(cfg.discount.delta_phi, float)


@given(
    st.floats(0.01, 0.99),
    st.integers(1, 30),
    st.integers(2, 5000),
    st.booleans(),
    st.lists(st.integers(1, 60), min_size=1, max_size=5),
    st.floats(0.0, 10.0),
)
def test_roundtrip_property(rho, dT, n_mc, har, lags, theta):
    cfg = RunConfig().with_overrides(
        {
            "rv.rho": rho,
            "parents.dT": dT,
            "engine.n_mc": n_mc,
            "engine.ess_floor": 1.0,
            "features.har": har,
            "signals.lags": lags,
            "signals.threshold": theta,
        }
    )
    assert RunConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize(
    "text, field",
    [
        ("parents.bogus = 1", "parents.bogus"),
        ("nosuch.key = 1", "nosuch"),
        ("rv.rho = 1.5", "rv.rho"),
        ("parents.dT = 2.5", "parents.dT"),
        ("engine.n_mc = 1", "engine.n_mc"),
        ("features.design = spiral", "features.design"),
        ("signals.kinds = [\"mood\"]", "signals.kinds"),
        ("run.warmup = null", "run.warmup"),
        ("discount.delta_gamma = 0", "discount.delta_gamma"),
        ("garbage line", "line 1"),
    ],
)
def test_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        RunConfig.from_text(text)


def test_comments_and_bare_words():
    cfg = RunConfig.from_text("# experiment A\n\nrun.out = results/a\nsim.generator = har\n")
    assert cfg.run.out == "results/a"
    assert cfg.sim.generator == "har-known"
