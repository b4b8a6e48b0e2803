import dataclasses as dc

import numpy as np
import pytest

from conftest import coarse_config
from pdmp_mfc import dual
from pdmp_mfc.core import DualPath, FieldKind, StepTable, TerminalCost, ValueField


def _W(lam, cfg):
    return dual.dual_value_estimate(lam, cfg, method="density").value


def test_best_response_examples(coarse):
    fc = dual.CouplingCost.from_config(coarse)
    lam = np.linspace(-1.0, 1.0, coarse.grid.n_t + 1)
    v = dual.best_response_v(lam, fc)
    np.testing.assert_allclose(v, 0.4 + lam / 2.0)
    np.testing.assert_allclose(dual.best_response_v(DualPath(lam), fc), v)
    # v minimises f(v) - v lam pointwise
    for dv in (-1e-3, 1e-3):
        assert np.all(fc.f(v + dv) - (v + dv) * lam >= fc.f(v) - v * lam)


def test_best_response_large_kappa_pins_reference(coarse):
    c = dc.replace(coarse, costs=dc.replace(coarse.costs, kappa=1e9))
    lam = np.full(c.grid.n_t + 1, 3.0)
    np.testing.assert_allclose(dual.best_response_v(lam, dual.CouplingCost.from_config(c)), 0.4,
                               atol=1e-8)


def test_no_coupling_rejected(coarse):
    free = dc.replace(coarse, costs=dc.replace(coarse.costs, tracking=False))
    fc = dual.CouplingCost.from_config(free)
    assert fc.kind == "none"
    with pytest.raises(ValueError):
        dual.best_response_v(np.zeros(3), fc)
    with pytest.raises(ValueError):
        dual.uzawa_run(free, K=1)
    with pytest.raises(ValueError):
        dual.CouplingCost("tracking_quadratic", kappa=0.0, r=np.zeros(3))


def test_step_sizes():
    np.testing.assert_allclose(dual.step_sizes(2.0, 4), [2.0, 1.0, 2 / 3, 0.5])


def test_zero_step_keeps_lambda(coarse):
    lam0 = np.full(coarse.grid.n_t + 1, 0.3)
    res = dual.uzawa_run(coarse, K=2, a=0.0, M=200, lam0=lam0)
    np.testing.assert_array_equal(res.lam, lam0)
    assert len(res.history) == 2


def test_dual_of_zero_problem_is_zero():
    c = coarse_config(kappa=1.0, reference=StepTable.constant(0.0))
    c = dc.replace(c, costs=dc.replace(c.costs, terminal=TerminalCost()))
    # no running, terminal or price cost: phi = 0, alpha = 0, and at lambda = 0 v = r = 0
    assert _W(np.zeros(c.grid.n_t + 1), c) == pytest.approx(0.0, abs=1e-12)


def test_gradient_consistency(coarse, rng):
    n = coarse.grid.n_t + 1
    for _ in range(3):
        lam = rng.normal(0.0, 0.5, n)
        mu = rng.normal(0.0, 1.0, n)
        U = dual.dual_gradient(lam, coarse, method="density")
        h = 1e-5
        fd = (_W(lam + h * mu, coarse) - _W(lam - h * mu, coarse)) / (2 * h)
        assert dual.pairing(U, mu, coarse) == pytest.approx(fd, rel=1e-4)


def test_weak_duality(coarse, rng):
    n = coarse.grid.n_t + 1
    lam = rng.normal(0.0, 0.5, n)
    resp = dual.respond(np.zeros(n), coarse, method="density")
    primal = dual.primal_cost(resp.control, coarse)
    for scale in (0.0, 1.0, 3.0):
        assert _W(scale * lam, coarse) <= primal + 1e-12
    # any control, including no control at all, bounds the dual from above
    idle = ValueField.zeros(FieldKind.CONTROL, coarse.grid)
    assert _W(lam, coarse) <= dual.primal_cost(idle, coarse) + 1e-12


def test_density_ascent_increases_dual(coarse):
    c = dc.replace(coarse, costs=dc.replace(coarse.costs, reference=StepTable.constant(0.6)))
    res = dual.uzawa_run(c, K=8, method="density", a=0.5)
    W = [h["W_estimate"] for h in res.history]
    assert np.all(np.diff(W) > -1e-12)
    g = [h["grad_norm"] for h in res.history]
    assert g[-1] < g[0]


def test_mc_dual_matches_density(coarse):
    lam = 0.3 * np.cos(coarse.grid.times)
    exact = _W(lam, coarse)
    mc = dual.dual_value_estimate(lam, coarse, method="mc", M=20_000, seed=3)
    assert abs(mc.value - exact) < 4 * mc.stderr + 0.01 * abs(exact)


def test_uzawa_reproducible(coarse):
    a = dual.uzawa_run(coarse, K=3, M=500, seed=9)
    b = dual.uzawa_run(coarse, K=3, M=500, seed=9, workers=2)
    np.testing.assert_array_equal(a.lam, b.lam)


def test_lambda_divergence_guard(coarse):
    c = dc.replace(coarse, algo=dc.replace(coarse.algo, lambda_bound=1e-3))
    with pytest.raises(dual.LambdaDivergence):
        dual.uzawa_run(c, K=2, M=200)


def test_tracking_needs_reference_table():
    with pytest.raises(ValueError):
        dual.CouplingCost.from_config(coarse_config(reference=None))
    with pytest.raises(ValueError):
        dual.CouplingCost.from_config(coarse_config(reference="nominal_mean"))
