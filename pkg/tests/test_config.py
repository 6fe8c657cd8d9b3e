import copy

import pytest
import yaml

from vdcalib.config import ConfigError, RunConfig, default_config_path
from vdcalib.inference import MHConfig, SMCConfig
from vdcalib.params import VehicleParams


def test_default_config_loads(config):
    assert config.path == default_config_path()
    assert config.stage_names() == ["longitudinal", "lateral", "coastdown"]
    assert config.dt == 5e-3 and config.sample_dt == 0.01
    assert isinstance(config.seed, int)


def test_default_vehicle_block_matches_known_values(config):
    p, d = config.vehicle_params(), VehicleParams()
    for k in ("m", "m_uf", "m_ur", "J_x", "J_z", "J_xz", "J_w", "a", "b", "h", "c_f", "c_r",
              "h_rcf", "h_rcr", "k_tf", "k_tr", "r0"):
        assert getattr(p, k) == getattr(d, k), k


def test_truth_block(config):
    t = config.truth_params()
    assert (t.C_xf, t.C_xr, t.C_yf, t.C_yr) == (25000, 28000, 50000, 50000)
    assert (t.k_phi_f, t.k_phi_r, t.b_phi_f + t.b_phi_r, t.rr) == (40000, 40000, 20000, 0.0175)


def test_default_noise_levels(config):
    n = config.noise()
    assert (n["u"], n["omega_lf"], n["omega_rr"]) == (0.1, 1.0, 1.0)


def test_sampler_defaults(config):
    kind, s = config.sampler()
    assert kind == "smc" and isinstance(s, SMCConfig)
    assert (s.n_chains, s.n_draws, s.target_accept, s.seed) == (8, 1000, 0.9, config.seed)
    kind, m = config.sampler("mh", n_draws=10_000)
    assert isinstance(m, MHConfig) and m.n_draws == 10_000 and m.n_tune == 500
    with pytest.raises(ConfigError):
        config.sampler("nuts")


def test_hash_stable_and_sensitive(config):
    assert config.hash == RunConfig.default().hash
    assert len(config.hash) == 16
    assert config.override(seed=1).hash != config.hash
    assert config.override(**{"sampler.n_draws": 10}).raw["sampler"]["n_draws"] == 10


def test_missing_file_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.yaml"):
        RunConfig.load(tmp_path / "nope.yaml")


def test_invalid_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: [1, 2\n")
    with pytest.raises(ConfigError, match="YAML"):
        RunConfig.load(p)


@pytest.mark.parametrize("change,match", [
    ({"seed": None}, "seed"),
    ({"colour": "red"}, "unknown"),
    ({"vehicle.m": -5.0}, "vehicle"),
    ({"noise.u": -1}, "noise"),
    ({"sampler.burnin": 5}, "sampler"),
    ({"maneuvers.coastdown": {"speed": 3}}, "coastdown"),
])
def test_validation_errors(config, change, match):
    with pytest.raises(ConfigError, match=match):
        config.override(**change)


def test_upstream_must_be_earlier(config):
    raw = copy.deepcopy(config.raw)
    raw["stages"][0]["upstream"] = {"C_yf": "lateral"}
    with pytest.raises(ConfigError, match="earlier stage"):
        RunConfig(raw)


def test_unknown_stage(config):
    with pytest.raises(ConfigError, match="no stage"):
        config.stage_plan("braking")


def test_round_trip_through_yaml(config, tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(config.raw))
    assert RunConfig.load(p).hash == config.hash
