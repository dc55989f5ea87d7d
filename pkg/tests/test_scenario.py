"""Scenario configuration: defaults, validation, YAML round trip."""
import numpy as np
import pytest

from gridest.ninebus import DisturbanceEvent
from gridest.scenario import ScenarioConfig


def test_defaults():
    cfg = ScenarioConfig()
    assert cfg.t_f == 5.0
    assert cfg.dt == 0.01
    assert cfg.dt_obs == 0.05
    assert cfg.noise_var == 1e-4
    assert cfg.seed == 1234
    assert cfg.method == "adjoint"
    assert cfg.pce_order == 2
    assert cfg.pce_rule == "stochastic-testing"
    assert cfg.disturbance == DisturbanceEvent(bus=5, start=0.1,
                                               duration=0.2, load=5.5)
    assert tuple(cfg.prior_mean) == (24.0, 6.0, 3.1)
    assert tuple(cfg.prior_var) == (5.76, 0.36, 0.09)
    assert tuple(cfg.m_true) == (23.64, 6.40, 3.01)
    # independent instances get independent event objects
    assert ScenarioConfig().disturbance == cfg.disturbance


def test_derived_helpers():
    cfg = ScenarioConfig(t_f=1.0)
    assert cfg.events() == (cfg.disturbance,)
    assert len(cfg.times()) == 20
    prior = cfg.prior()
    assert np.allclose(prior.mean, [24.0, 6.0, 3.1])
    noise = cfg.noise(360)
    assert noise.var.shape == (360,)
    assert np.all(noise.var == 1e-4)
    none_cfg = ScenarioConfig(t_f=1.0, disturbance=None)
    assert none_cfg.events() == ()


def test_validation_errors():
    with pytest.raises(ValueError, match="positive"):
        ScenarioConfig(t_f=-1.0)
    with pytest.raises(ValueError, match="multiple"):
        ScenarioConfig(dt_obs=0.013)
    with pytest.raises(ValueError, match="multiple"):
        ScenarioConfig(dt_obs=0.005)  # smaller than dt
    with pytest.raises(ValueError, match="disturbance"):
        ScenarioConfig(t_f=0.25)  # event window extends past t_f
    with pytest.raises(ValueError, match="noise"):
        ScenarioConfig(noise_var=0.0)
    with pytest.raises(ValueError, match="prior"):
        ScenarioConfig(prior_var=(1.0, -1.0, 1.0))
    with pytest.raises(ValueError, match="length"):
        ScenarioConfig(prior_mean=(24.0, 6.0))
    with pytest.raises(ValueError, match="method"):
        ScenarioConfig(method="mcmc")
    with pytest.raises(ValueError, match="rule"):
        ScenarioConfig(pce_rule="random")
    with pytest.raises(ValueError, match="order"):
        ScenarioConfig(pce_order=0)
    with pytest.raises(ValueError, match="order"):
        ScenarioConfig(pce_order=6)


def test_yaml_round_trip(tmp_path):
    cfg = ScenarioConfig(t_f=2.0, dt_obs=0.1, method="pce", pce_order=3,
                         pce_rule="sparse", seed=99,
                         disturbance=DisturbanceEvent(bus=7, start=0.2,
                                                      duration=0.3, load=4.0))
    path = tmp_path / "scenario.yaml"
    cfg.save(path)
    back = ScenarioConfig.from_file(path)
    assert back == cfg
    # byte-determinism of the serialization
    cfg.save(tmp_path / "again.yaml")
    assert (tmp_path / "again.yaml").read_bytes() == path.read_bytes()


def test_yaml_no_disturbance(tmp_path):
    cfg = ScenarioConfig(disturbance=None)
    path = tmp_path / "s.yaml"
    cfg.save(path)
    back = ScenarioConfig.from_file(path)
    assert back.disturbance is None
    assert back == cfg


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown"):
        ScenarioConfig.from_dict({"t_f": 1.0, "volume": 11})


def test_to_dict_structure():
    cfg = ScenarioConfig()
    d = cfg.to_dict()
    assert d["disturbance"] == {"bus": 5, "start": 0.1, "duration": 0.2,
                                "load": 5.5}
    assert d["t_f"] == 5.0
    assert ScenarioConfig.from_dict(d) == cfg


def test_with_overrides():
    cfg = ScenarioConfig()
    new = cfg.with_overrides(t_f=2.0, seed=7, method="pce")
    assert new.t_f == 2.0
    assert new.seed == 7
    assert new.method == "pce"
    # None entries mean "keep", and the original is untouched
    same = cfg.with_overrides(t_f=None)
    assert same.t_f == cfg.t_f
    assert cfg.seed == 1234
    with pytest.raises(ValueError):
        cfg.with_overrides(t_f=0.2)  # re-validated after the merge
