import dataclasses as dc

import pytest
import yaml

from pdmp_mfc.config import (ConfigError, config_hash, default_config, from_dict, load_config,
                             parse_quantity, with_overrides)
from pdmp_mfc.core import JumpCost, StepTable


@pytest.mark.parametrize("value, dim, expected", [
    ("2 min", "time", 2 / 60),
    ("90 s", "time", 90 / 3600),
    ("1.5 h", "time", 1.5),
    ("0.02 /h", "rate", 0.02),
    ("0.2 /min", "rate", 12.0),
    ("12 degC/h", "temperature_rate", 12.0),
    ("0.2 degC/min", "temperature_rate", 12.0),
    ("65 degC", "temperature", 65.0),
    (3, "dimensionless", 3.0),
])
def test_parse_quantity(value, dim, expected):
    assert parse_quantity(value, dim, "x") == pytest.approx(expected)


def test_units_are_required():
    with pytest.raises(ConfigError, match="a unit is required"):
        parse_quantity(2, "time", "grid.dt")
    with pytest.raises(ConfigError, match="not a time unit"):
        parse_quantity("2 degC", "time", "grid.dt")
    with pytest.raises(ConfigError):
        from_dict({"grid": {"dt": 2}})


def test_default_config_values(cfg):
    g = cfg.grid
    assert (g.T, g.dt, g.dtheta, g.theta_lo, g.theta_hi) == pytest.approx((24, 1 / 30, 1, 45, 70))
    assert cfg.physics.sigmaP == 12.0
    assert cfg.bounds.peak == 12.0
    assert cfg.algo.on_probability == 0.38
    assert cfg.costs.reference == "nominal_mean"


def test_grid_must_be_multiple():
    with pytest.raises(ConfigError, match="multiples"):
        from_dict({"grid": {"horizon": "1 h", "dt": "7 min"}})


def test_table_from_csv(tmp_path):
    (tmp_path / "eps.csv").write_text("hour,rate\n0,0.6\n6,2.4\n")
    raw = {"physics": {"eps": {"unit": "/min", "file": "eps.csv"}}}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(raw))
    cfg = load_config(path)
    assert cfg.physics.eps == StepTable((0.0, 6.0), (36.0, 144.0))


def test_reference_forms():
    assert from_dict({"costs": {"reference": {"unit": "1", "knots": [[0, 0.2]]}}}).costs.reference \
        == StepTable.constant(0.2)
    with pytest.raises(ConfigError):
        from_dict({"costs": {"reference": "yesterday"}})


def test_malformed_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("- a list\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_hash_tracks_content(cfg):
    assert config_hash(cfg) == config_hash(default_config())
    assert config_hash(with_overrides(cfg, seed=1)) != config_hash(cfg)
    cheap = dc.replace(cfg, costs=dc.replace(cfg.costs, jump_cost=JumpCost.quadratic(0.5)))
    assert config_hash(cheap) != config_hash(cfg)
    assert with_overrides(cfg, M=5, K=7).algo == dc.replace(cfg.algo, M=5, K=7)
