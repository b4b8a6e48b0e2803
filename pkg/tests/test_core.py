import dataclasses as dc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdmp_mfc.core import (QUADRATIC, Bounds, FieldKind, Grid, JumpCost, Mode, ScenarioConfig,
                           StepTable, ValueField, H_prime, H_value, validate_config)
from pdmp_mfc.hjb import max_drift

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("x, expected", [(-3.0, 0.0), (0.0, 0.0), (2.0, 2.0)])
def test_H_value_examples(x, expected):
    assert H_value(x) == expected


@pytest.mark.parametrize("x, expected", [(-1.0, 0.0), (0.0, 0.0), (0.7, 0.7)])
def test_H_prime_examples(x, expected):
    assert H_prime(x) == expected


@given(st.floats(-1e6, 0.0))
def test_H_vanishes_on_negatives(x):
    assert H_value(x) == 0.0 and H_prime(x) == 0.0


@given(finite, finite)
def test_H_midpoint_convex(x, y):
    assert H_value(0.5 * (x + y)) <= 0.5 * (H_value(x) + H_value(y)) + 1e-9 * (1 + x * x + y * y)


@given(st.floats(0.01, 100.0))
def test_H_prime_matches_finite_difference(x):
    h = 1e-4 * max(1.0, x)
    fd = (H_value(x + h) - H_value(x - h)) / (2 * h) if x > h else (H_value(x + h) - H_value(x)) / h
    assert abs(fd - H_prime(x)) <= 10 * h


@given(st.floats(1e-3, 1e3))
def test_legendre_identity(x):
    y = H_prime(x)
    assert x * y - QUADRATIC.L(y) == pytest.approx(H_value(x), rel=1e-12)


def test_jump_cost_L_domain():
    assert QUADRATIC.L(-0.1) == np.inf
    assert QUADRATIC.L(0.0) == 0.0
    assert QUADRATIC.L(2.0) == 2.0
    with pytest.raises(ValueError):
        JumpCost.quadratic(0.0)


def test_scaled_quadratic_conjugate():
    jc = JumpCost.quadratic(0.25)
    x = 1.3
    y = H_prime(x, jc)
    assert y == pytest.approx(x / 0.25)
    assert x * y - jc.L(y) == pytest.approx(H_value(x, jc))


def test_mode_index_range():
    Mode(1, 2)
    with pytest.raises(ValueError):
        Mode(2, 2)


def test_grid_geometry():
    g = Grid(24.0, 720, 45.0, 70.0, 25)
    assert g.dt == pytest.approx(1 / 30)
    assert g.dtheta == 1.0
    assert g.times.size == 721 and g.thetas.size == 26
    idx, w = g.locate(np.array([45.0, 45.25, 70.0, 80.0, 40.0]))
    assert idx.tolist() == [0, 0, 24, 24, 0]
    assert w.tolist() == [0.0, 0.25, 1.0, 1.0, 0.0]
    vals = 2.0 * g.thetas + 1
    assert g.interp(vals, 51.3) == pytest.approx(103.6)


def test_step_table_right_continuous():
    tab = StepTable.window(8.0, 20.0, 5.0, 1.0)
    assert tab(7.999) == 1.0 and tab(8.0) == 5.0 and tab(19.99) == 5.0 and tab(20.0) == 1.0
    assert tab.shifted(2.0)(21.0) == 5.0 and tab.shifted(2.0)(22.0) == 1.0
    assert tab.min == 1.0 and tab.max == 5.0
    with pytest.raises(ValueError):
        StepTable((0.0, 0.0), (1.0, 2.0))


def test_value_field_checks():
    g = Grid(1.0, 4, 0.0, 4.0, 4)
    ctl = ValueField.zeros(FieldKind.CONTROL, g)
    assert ctl.check() == []
    bad = ctl.values.copy()
    bad[0, 1, 1, 0] = 0.5
    bad[0, 0, 1, 0] = -0.1
    problems = ValueField(bad, FieldKind.CONTROL, g).check()
    assert "negative control rate" in problems and "non-zero diagonal control rate" in problems
    dens = ValueField.zeros(FieldKind.DENSITY, g)
    assert "density mass is not 1" in dens.check()
    with pytest.raises(ValueError):
        ValueField(np.zeros((3, 2, 5)), FieldKind.VALUE, g)


def test_default_config_is_valid(cfg):
    assert validate_config(cfg) == []
    # drift bound and first grid condition of the shipped configuration
    B = max_drift(cfg)
    assert B < 30.0
    assert B * cfg.grid.dt / cfg.grid.dtheta < 1.0


def test_cfl_violation_is_named(cfg):
    # dtheta = 1/6 degC at dt = 2 min gives B dt / dtheta > 2
    fine = dc.replace(cfg, grid=Grid(24.0, 720, 45.0, 70.0, 150))
    violations = validate_config(fine)
    assert len(violations) == 1
    assert "CFL" in violations[0] and violations[0].startswith("grid.")


def test_bounds_ordering_violation(cfg):
    bad = dc.replace(cfg, bounds=dc.replace(cfg.bounds, theta_min=70.0))
    violations = validate_config(bad)
    assert len(violations) == 1 and violations[0].startswith("bounds.theta_min")


def test_intensity_violation(cfg):
    bad = dc.replace(cfg, bounds=dc.replace(cfg.bounds, peak=40.0))
    violations = validate_config(bad)
    assert any("intensity condition" in v for v in violations)


def test_tracking_needs_kappa_and_reference(cfg):
    bad = dc.replace(cfg, costs=dc.replace(cfg.costs, tracking=True, kappa=0.0, reference=None))
    fields = {v.split(":")[0] for v in validate_config(bad)}
    assert fields == {"costs.kappa", "costs.reference"}


def test_bounds_default_ramp_is_one_cell():
    g = Grid(1.0, 30, 45.0, 70.0, 50)
    assert ScenarioConfig(g).ramp_width == 0.5
    assert ScenarioConfig(g, bounds=Bounds(ramp_width=1.0)).ramp_width == 1.0
