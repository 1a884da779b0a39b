import math

import pytest

from phi4lab.config import LabConfig, parse_config
from phi4lab.errors import ConfigurationError


def test_empty_config_gives_defaults():
    cfg = parse_config(text="")
    assert cfg.epsilon == 0.1 and cfg.eta == 0.05
    assert (cfg.grid.dim, cfg.grid.points) == (1, 64)
    assert cfg.solver.dt == 1e-3
    assert cfg.C_cap == 100.0
    assert parse_config() == cfg


def test_full_profile():
    cfg = parse_config(profile="full")
    assert (cfg.grid.dim, cfg.grid.points, cfg.solver.dt) == (3, 32, 5e-4)


def test_epsilon_too_large():
    with pytest.raises(ConfigurationError, match="0 < epsilon <= 1/4"):
        parse_config(text="epsilon = 0.3")
    assert parse_config(text="epsilon = 0.25").epsilon == 0.25


def test_malformed_reports_line():
    with pytest.raises(ConfigurationError, match="line 3"):
        parse_config(text="epsilon = 0.1\n[grid]\npoints = = 4\n")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="flux"):
        parse_config(text="flux = 1")
    with pytest.raises(ConfigurationError, match="grid"):
        parse_config(text="[grid]\nsize = 3")


def test_type_mismatch():
    with pytest.raises(ConfigurationError):
        parse_config(text="[grid]\npoints = 'many'")
    with pytest.raises(ConfigurationError):
        parse_config(text="[coupling]\nreplicas = true")


def test_invariants():
    with pytest.raises(ConfigurationError):
        parse_config(text="eta = 0")
    with pytest.raises(ConfigurationError):
        parse_config(text="[coupling]\nreplicas = 0")
    with pytest.raises(ConfigurationError):
        parse_config(text="[coupling]\nell = [1.0, -2.0]")


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_config(tmp_path / "absent.toml")


def test_file_and_overrides(tmp_path):
    path = tmp_path / "lab.toml"
    path.write_text("root_seed = 4\n[grid]\npoints = 32\n")
    cfg = parse_config(path, overrides={"root_seed": 9})
    assert cfg.root_seed == 9 and cfg.grid.points == 32
    assert cfg.grid.length == pytest.approx(2 * math.pi)


def test_partial_spec_table():
    cfg = parse_config(text="[coefficients.Z0]\nmean_offset = 1.0\n")
    spec = cfg.coefficients.specs(cfg.eta)["Z0"]
    assert spec.mean_offset == 1.0 and spec.alpha == pytest.approx(-0.55)
    assert spec.amplitude == 0.2


def test_to_dict_round_trip():
    cfg = LabConfig()
    d = cfg.to_dict()
    assert d["coupling"]["windows"] == 3
    assert isinstance(d["grid"], dict)
