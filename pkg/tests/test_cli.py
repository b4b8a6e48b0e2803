import json

import numpy as np
import pytest
import yaml

from pdmp_mfc import cli
from pdmp_mfc.config import config_hash, with_overrides
from pdmp_mfc.scenarios import (ConfigViolation, emit_series, fmt, read_series, run_scenario,
                                scenario_config, tracking_rmse)


def test_fmt_examples():
    assert fmt(0.1234567) == "0.123457"
    assert fmt(2.0) == "2"
    assert fmt(-0.0) == "0"
    assert fmt(1234567.0) == "1234570"


def test_emit_series_examples(tmp_path):
    path = emit_series(tmp_path / "a.csv", np.array([0.0, 0.5]),
                       {"x": np.array([1.0, 0.25]), "y": np.array([1 / 3, 2.0])})
    assert path.read_text() == "time_h,x,y\n0,1,0.333333\n0.5,0.25,2\n"


def test_emit_series_round_trip(tmp_path, rng):
    t = np.linspace(0.0, 24.0, 13)
    x = rng.uniform(0.0, 1.0, t.size)
    back = read_series(emit_series(tmp_path / "r.csv", t, {"x": x}))
    np.testing.assert_allclose(back["time_h"], t)
    np.testing.assert_allclose(back["x"], x, rtol=5e-6)


def test_emit_series_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        emit_series(tmp_path / "e.csv", np.zeros(3), {})
    with pytest.raises(ValueError):
        emit_series(tmp_path / "e.csv", np.zeros(3), {"x": np.zeros(4)})


def test_tracking_rmse():
    assert tracking_rmse([1.0, 3.0], [1.0, 1.0]) == pytest.approx(np.sqrt(2.0))


def test_unknown_scenario(cfg):
    with pytest.raises(ConfigViolation):
        scenario_config("weekly", cfg)


def test_nominal_is_byte_identical(cfg, tmp_path):
    small = with_overrides(cfg, M=500, seed=7)
    a = run_scenario("nominal", small, tmp_path / "a")
    b = run_scenario("nominal", small, tmp_path / "b")
    assert [p.name for p in a.files] == ["aggregate.csv", "trajectories.csv", "manifest.json"]
    for pa, pb in zip(a.files, b.files):
        assert pa.read_bytes() == pb.read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 7 and man["M"] == 500
    assert man["config_sha256"] == config_hash(scenario_config("nominal", small))
    assert set(man["files"]) == {"aggregate.csv", "trajectories.csv"}


def test_three_class_mean_is_exact(cfg, tmp_path):
    res = run_scenario("pricing3class", with_overrides(cfg, M=300), tmp_path)
    s = res.series
    np.testing.assert_array_equal(s["three_prices"],
                                  (s["class_0"] + s["class_1"] + s["class_2"]) / 3.0)
    prices = read_series(tmp_path / "prices.csv")
    hour = np.searchsorted(res.times, 8.5)
    assert prices["price_0"][hour] == 20.0 and prices["price_1"][hour] == 4.0


def test_tracking_scenario_files(cfg, tmp_path):
    res = run_scenario("tracking", with_overrides(cfg, M=300, K=3), tmp_path, emit_fields=True,
                       timing=True)
    names = {p.name for p in res.files}
    assert {"aggregate.csv", "lambda.csv", "alpha_total.csv", "diagnostics.csv", "phi.csv",
            "alpha.csv", "density.csv", "manifest.json"} <= names
    diag = (tmp_path / "diagnostics.csv").read_text().splitlines()
    assert diag[0].endswith("wallclock_s") and len(diag) == 4
    agg = read_series(tmp_path / "aggregate.csv")
    assert np.all(agg["reference"] == agg["reference"][0])
    assert agg["reference"][0] == pytest.approx(np.mean(agg["nominal"]), rel=1e-5)


def test_cli_ok(tmp_path, capsys):
    assert cli.main(["nominal", "--M", "200", "--out", str(tmp_path)]) == cli.EXIT_OK
    assert "aggregate.csv" in capsys.readouterr().out


def _write(tmp_path, raw):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_cli_config_errors(tmp_path, capsys):
    bad_unit = _write(tmp_path, {"grid": {"dt": "2 degC"}})
    assert cli.main(["nominal", "--config", bad_unit, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    inverted = _write(tmp_path, {"bounds": {"theta_min": "70 degC"}})
    assert cli.main(["nominal", "--config", inverted, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "theta_min" in capsys.readouterr().err
    fine = _write(tmp_path, {"grid": {"dtheta": "0.1 degC"}})
    assert cli.main(["nominal", "--config", fine, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "CFL" in capsys.readouterr().err


def test_cli_divergence(tmp_path):
    tight = _write(tmp_path, {"costs": {"reference": "nominal_mean"},
                             "algo": {"lambda_bound": 1e-9, "M": 100, "K": 2}})
    assert cli.main(["tracking", "--config", tight, "--out", str(tmp_path)]) == cli.EXIT_DIVERGENCE


def test_cli_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["nominal", "--M", "50", "--out", str(blocker / "sub")]) == cli.EXIT_IO
