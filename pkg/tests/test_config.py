import pytest

from retarget_guidance.config import RunConfig, config_from_dict, dump_config, load_config
from retarget_guidance.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.physics.m_wet == 1050.0
    assert cfg.physics.alpha == 0.00035
    assert (cfg.physics.rho_min, cfg.physics.rho_max) == (1480.0, 3120.0)
    assert cfg.physics.g == [0.0, 0.0, -1.68]
    assert cfg.limits.thrust_rate_max == 200.0
    assert cfg.limits.m_terminal_min == 850.0
    assert cfg.simulation.dt == 0.1
    assert (cfg.simulation.tol_pos, cfg.simulation.tol_vel) == (10.0, 0.5)
    assert cfg.scenario.target == [0.0, 0.0, 1300.0]
    assert (cfg.scenario.altitude, cfg.scenario.range) == (6800.0, 28500.0)
    assert (cfg.scenario.descent_rate, cfg.scenario.horizontal_speed) == (59.0, 336.0)
    assert cfg.scenario.dispersion == [3000.0, 3000.0, 17.0, 17.0]
    assert cfg.scenario.sigma3 == [900.0, 750.0, 2.5, 1.75]
    assert (cfg.feasibility.tgo_min, cfg.feasibility.tgo_max) == (100.0, 300.0)
    assert (cfg.feasibility.eps_t, cfg.feasibility.delta_tgo) == (0.5, 2.0)
    assert cfg.dataset.n_states == 2000
    assert cfg.level2.eta == 0.01
    assert cfg.montecarlo.n_runs == 500
    assert cfg.a0_net.tolist() == pytest.approx([-2.26, 0.0, 0.23])
    assert cfg.af_net.tolist() == pytest.approx([0.0, 0.0, 1.52])


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    assert load_config(p) == RunConfig()


@pytest.mark.parametrize("data", [
    {"physics": {"mass": 1.0}},
    {"bogus": 1},
    {"simulation": {"dt": -0.1}},
    {"physics": {"rho_min": 4000.0}},
    {"schema_version": 2},
    {"physics": {"m_wet": "heavy"}},
    {"physics": 3},
    {"lasso": {"tgo_margin_quantile": 1.5}},
])
def test_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("physics: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_round_trip(tmp_path):
    cfg = config_from_dict({"seed": 5, "physics": {"m_wet": 1000.0}, "lasso": {"mu": 0.01}})
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
