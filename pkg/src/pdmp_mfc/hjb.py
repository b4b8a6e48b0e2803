"""Backward value-function solver, control extraction and the forward density.

The value function is computed by an explicit semi-Lagrangian sweep. From
node ``(t_n, i, theta_k)`` the characteristic of mode ``i`` is followed for
one step to its foot ``theta'``; all next-level values are interpolated
there (``psi_j = phi(t_{n+1}, j, theta')``) and

    phi(t_n, i, theta_k) = psi_i + dt * [c + p_i * lambda_n
                                         - sum_j H(psi_i - psi_j)
                                         + sum_j alpha_hat_j(i, theta_k) (psi_j - psi_i)].

This is exactly the dynamic programme of the Markov chain that follows the
flow and then jumps with probability ``dt * (alpha_j + alpha_hat_j)``, the
chain used by :mod:`pdmp_mfc.simulator`. The forward density below is that
chain's law, i.e. the transpose of the backward sweep, which is what makes
the deterministic dual gradient exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dynamics
from .core import DualPath, FieldKind, Grid, ScenarioConfig, ValueField


class DivergenceError(RuntimeError):
    """Raised when a numerical scheme leaves its stability region."""


@dataclass(frozen=True)
class SolverSettings:
    max_phi_magnitude: float = 1e8

    def __post_init__(self) -> None:
        if not (np.isfinite(self.max_phi_magnitude) and self.max_phi_magnitude > 0):
            raise ValueError("max_phi_magnitude must be finite and positive")


@dataclass(frozen=True)
class CflReport:
    B: float
    cfl_ratio: float
    intensity_ratio: float
    alpha_bound: float
    hat_sup: float

    @property
    def cfl_ok(self) -> bool:
        return self.cfl_ratio <= 1.0

    @property
    def intensity_ok(self) -> bool:
        return self.intensity_ratio <= 1.0

    @property
    def ok(self) -> bool:
        return self.cfl_ok and self.intensity_ok

    @property
    def cfl_margin(self) -> float:
        return 1.0 - self.cfl_ratio

    @property
    def intensity_margin(self) -> float:
        return 1.0 - self.intensity_ratio


def max_drift(cfg: ScenarioConfig) -> float:
    g = cfg.grid
    t = g.times[:, None, None]
    i = np.arange(g.d)[None, :, None]
    th = g.thetas[None, None, :]
    return float(np.max(np.abs(dynamics.drift(t, i, th, cfg.physics))))


def cfl_check(cfg: ScenarioConfig, alpha_bound: float) -> CflReport:
    """Both grid conditions: ``B dt / dtheta <= 1`` and ``dt (alpha_bound + |alpha_hat|) <= 1``."""
    g = cfg.grid
    B = max_drift(cfg)
    hat_sup = cfg.bounds.peak
    return CflReport(B=B, cfl_ratio=B * g.dt / g.dtheta,
                     intensity_ratio=g.dt * (alpha_bound + hat_sup),
                     alpha_bound=float(alpha_bound), hat_sup=hat_sup)


def _feet(cfg: ScenarioConfig) -> np.ndarray:
    """Foot of every characteristic, ``(n_t, d, n_nodes)``."""
    g = cfg.grid
    t = g.times[:-1, None, None]
    i = np.arange(g.d)[None, :, None]
    return dynamics.advance_flow(t, i, g.thetas[None, None, :], g.dt, cfg.physics)


def _hat_table(cfg: ScenarioConfig) -> np.ndarray:
    """``alpha_hat[i, j, k]`` on the temperature nodes (diagonal zero)."""
    g = cfg.grid
    i = np.arange(g.d)[:, None, None]
    j = np.arange(g.d)[None, :, None]
    return dynamics.hat_alpha_cfg(cfg, i, j, g.thetas[None, None, :])


def _running_table(lam: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """``c + p * lambda`` on the grid, ``(n_t + 1, d, n_nodes)``."""
    g = cfg.grid
    t = g.times[:, None, None]
    i = np.arange(g.d)[None, :, None]
    th = g.thetas[None, None, :]
    c = dynamics.running_cost_c(t, i, th, cfg)
    p = dynamics.consumption_p(np.arange(g.d), g.d)[None, :, None]
    return c + p * lam[:, None, None]


def _interp_at_feet(grid: Grid, nxt: np.ndarray, feet: np.ndarray) -> np.ndarray:
    """``psi[..., i, j, k]`` = mode ``j`` values interpolated at mode ``i``'s feet."""
    idx, w = grid.locate(feet)
    lo = np.take_along_axis(nxt[..., None, :, :], idx[..., :, None, :], axis=-1)
    hi = np.take_along_axis(nxt[..., None, :, :], idx[..., :, None, :] + 1, axis=-1)
    return lo * (1.0 - w[..., :, None, :]) + hi * w[..., :, None, :]


def solve_phi(lam: DualPath | np.ndarray, cfg: ScenarioConfig,
              settings: SolverSettings | None = None, *, controlled: bool = True,
              running: np.ndarray | None = None) -> ValueField:
    """Value function ``phi[lambda]`` by the explicit backward sweep.

    ``controlled=False`` drops the optimisation term (the value of the
    uncontrolled, safety-only dynamics). ``running`` replaces the tabulated
    ``c + p * lambda`` when given.
    """
    settings = settings or SolverSettings(cfg.algo.phi_bound)
    g = cfg.grid
    lam = lam.lam if isinstance(lam, DualPath) else np.asarray(lam, dtype=float)
    if lam.shape != (g.n_t + 1,):
        raise ValueError(f"lambda has shape {lam.shape}, expected {(g.n_t + 1,)}")
    jc = cfg.costs.jump_cost
    feet = _feet(cfg)
    hat = _hat_table(cfg)
    src = _running_table(lam, cfg) if running is None else running
    off = 1.0 - np.eye(g.d)[:, :, None]
    phi = np.empty((g.n_t + 1, g.d, g.n_nodes))
    phi[-1] = dynamics.terminal_cost_g(np.arange(g.d)[:, None], g.thetas[None, :], cfg)
    for n in range(g.n_t - 1, -1, -1):
        psi = _interp_at_feet(g, phi[n + 1], feet[n])
        own = np.einsum("iik->ik", psi)
        gap = own[:, None, :] - psi
        update = src[n] + np.sum(hat * (psi - own[:, None, :]), axis=1)
        if controlled:
            update = update - np.sum(off * jc.H(gap), axis=1)
        phi[n] = own + g.dt * update
        if not np.all(np.abs(phi[n]) <= settings.max_phi_magnitude):
            raise DivergenceError(
                f"|phi| exceeded {settings.max_phi_magnitude:g} at t={g.times[n]:.4g} h "
                "(unstable backward sweep; check the grid conditions)")
    return ValueField(phi, FieldKind.VALUE, g)


def extract_control(phi: ValueField, cfg: ScenarioConfig) -> ValueField:
    """Optimal intensities ``alpha_j(t, i, .) = H'(phi_i - phi_j)``.

    For ``t < T`` the value gap is taken where the backward sweep uses it: at
    the next time level, on the foot of the characteristic leaving the node.
    At ``T`` it is the nodal gap of the terminal values.
    """
    g = cfg.grid
    if phi.kind is not FieldKind.VALUE:
        raise ValueError("extract_control needs a value_phi field")
    jc = cfg.costs.jump_cost
    off = 1.0 - np.eye(g.d)[:, :, None]
    v = phi.values
    psi = _interp_at_feet(g, v[1:], _feet(cfg))
    own = np.einsum("niik->nik", psi)
    alpha = np.empty((g.n_t + 1, g.d, g.d, g.n_nodes))
    alpha[:-1] = jc.H_prime(own[:, :, None, :] - psi) * off
    alpha[-1] = jc.H_prime(v[-1][:, None, :] - v[-1][None, :, :]) * off
    return ValueField(alpha, FieldKind.CONTROL, g)


def check_intensity(control: ValueField, cfg: ScenarioConfig) -> float:
    """Largest per-step jump probability; raises when it exceeds 1."""
    g = cfg.grid
    total = control.values[:-1].sum(axis=2) + _hat_table(cfg).sum(axis=1)[None]
    worst = float(g.dt * total.max())
    if worst > 1.0 + 1e-12:
        n, i, k = np.unravel_index(np.argmax(total), total.shape)
        raise DivergenceError(
            f"dt * (alpha + alpha_hat) = {worst:.3g} > 1 at t={g.times[n]:.4g} h, mode {i}, "
            f"theta={g.thetas[k]:.4g}; refine dt or reduce the step size")
    return worst


def a_priori_alpha_bound(cfg: ScenarioConfig) -> float:
    """``H'`` of the largest mode gap of the uncontrolled value function at ``lambda = 0``."""
    phi0 = solve_phi(DualPath.zeros(cfg.grid), cfg, controlled=False).values
    gap = np.max(np.abs(phi0[:, :, None, :] - phi0[:, None, :, :]))
    return float(cfg.costs.jump_cost.H_prime(gap))


def uniform_hat_weights(grid: Grid, a: float, b: float) -> np.ndarray:
    """Mass each node receives from a uniform law on ``[a, b]`` under linear splitting."""
    def Phi(u):
        u = np.clip(u, -1.0, 1.0)
        return np.where(u <= 0, 0.5 * (1 + u) ** 2, 1 - 0.5 * (1 - u) ** 2)

    h = grid.dtheta
    th = grid.thetas
    w = (Phi((b - th) / h) - Phi((a - th) / h)) * h / (b - a)
    # mass of the law outside the grid collapses on the end nodes (clamping)
    w[0] += max(0.0, min(b, grid.theta_lo) - a) / (b - a)
    w[-1] += max(0.0, b - max(a, grid.theta_hi)) / (b - a)
    return w


def initial_density(cfg: ScenarioConfig) -> np.ndarray:
    g, b = cfg.grid, cfg.bounds
    w = uniform_hat_weights(g, b.theta_min, b.theta_max)
    m0 = np.zeros((g.d, g.n_nodes))
    p_on = cfg.algo.on_probability
    m0[0] = (1.0 - p_on) * w
    m0[g.d - 1] += p_on * w
    return m0


def forward_density(control: ValueField | None, cfg: ScenarioConfig,
                    m0: np.ndarray | None = None, refine: int = 1) -> ValueField:
    """Law of the simulated chain on the grid, stepped forward in time.

    Mass leaving node ``k`` in mode ``i`` moves to the foot of its
    characteristic, is split linearly between the two neighbouring nodes
    and switches to mode ``j`` with probability ``dt * (alpha_j + alpha_hat_j)``.
    With ``refine == 1`` this is the exact transpose of :func:`solve_phi`.

    ``refine > 1`` runs the same chain on a temperature grid ``refine`` times
    finer, with the control interpolated linearly as the simulator does, and
    returns the density projected back onto the coarse nodes. The splitting
    diffusion shrinks with the cell size, so this is the accurate law of
    the Monte Carlo simulator.
    """
    if refine > 1:
        return _refined_density(control, cfg, refine)
    g = cfg.grid
    K = g.n_nodes
    alpha = None if control is None else control.values
    if alpha is not None and (np.any(alpha < 0) or not np.all(np.isfinite(alpha))):
        raise ValueError("control field has negative or non-finite rates")
    feet = _feet(cfg)
    hat = _hat_table(cfg)
    eye = np.eye(g.d, dtype=bool)[:, :, None]
    m = np.empty((g.n_t + 1, g.d, K))
    m[0] = initial_density(cfg) if m0 is None else m0
    for n in range(g.n_t):
        q = g.dt * (hat if alpha is None else hat + alpha[n])
        q = np.where(eye, 0.0, q)
        stay = 1.0 - q.sum(axis=1)
        trans = np.where(eye, stay[:, None, :], q)
        idx, w = g.locate(feet[n])
        src = m[n][:, None, :] * trans
        nxt = np.zeros((g.d, K))
        for j in range(g.d):
            nxt[j] = (np.bincount(idx.ravel(), (src[:, j] * (1.0 - w)).ravel(), minlength=K + 1)[:K]
                      + np.bincount((idx + 1).ravel(), (src[:, j] * w).ravel(), minlength=K + 1)[:K])
        if np.any(nxt < -1e-14):
            raise DivergenceError(f"negative mass at t={g.times[n + 1]:.4g} h "
                                  "(jump probability above one)")
        m[n + 1] = nxt
    return ValueField(m, FieldKind.DENSITY, g)


def _refined_density(control: ValueField | None, cfg: ScenarioConfig, refine: int) -> ValueField:
    g = cfg.grid
    fine = Grid(g.T, g.n_t, g.theta_lo, g.theta_hi, g.n_theta * refine, g.d)
    fine_cfg = replace(cfg, grid=fine, bounds=replace(cfg.bounds, ramp_width=cfg.ramp_width))
    fine_control = None
    if control is not None:
        fine_control = ValueField(g.interp(control.values, fine.thetas), FieldKind.CONTROL, fine)
    m = forward_density(fine_control, fine_cfg).values
    # project fine nodes onto coarse hat functions (mass preserving)
    idx, w = g.locate(fine.thetas)
    P = np.zeros((fine.n_nodes, g.n_nodes))
    P[np.arange(fine.n_nodes), idx] = 1.0 - w
    P[np.arange(fine.n_nodes), idx + 1] += w
    return ValueField(m @ P, FieldKind.DENSITY, g)


def expected_consumption(density: ValueField, cfg: ScenarioConfig) -> np.ndarray:
    p = dynamics.consumption_p(np.arange(cfg.grid.d), cfg.grid.d)
    return np.einsum("tik,i->t", density.values, p)


def expected_control_cost(density: ValueField, control: ValueField, cfg: ScenarioConfig,
                          weights: np.ndarray) -> float:
    """``int E[sum_j L(alpha_j)] dt`` under the tabulated density."""
    L = cfg.costs.jump_cost.L(control.values)
    off = 1.0 - np.eye(cfg.grid.d)[None, :, :, None]
    per_node = np.sum(L * off, axis=2)
    return float(np.einsum("t,tik,tik->", weights, density.values, per_node))


def phi_residual(phi: ValueField, lam: np.ndarray, cfg: ScenarioConfig,
                 start_times: np.ndarray, theta_nodes: np.ndarray,
                 substeps: int = 8) -> np.ndarray:
    """Defect of ``phi`` in the integral equation along exact characteristics.

    For every start ``(t0, i, theta0)`` the characteristic is traced exactly
    on a time grid ``substeps`` times finer than the solver's, the integrand
    ``c + p lambda - sum H(phi_i - phi_j) + sum alpha_hat_j (phi_j - phi_i)`` is
    evaluated with ``phi`` interpolated bilinearly in ``(t, theta)`` and
    integrated by the midpoint rule. Returns ``|phi - right-hand side|`` with
    shape ``(len(start_times), d, len(theta_nodes))``.
    """
    g, ph = cfg.grid, cfg.physics
    jc = cfg.costs.jump_cost
    v = phi.values
    d = g.d
    h = g.dt / substeps
    power = dynamics.consumption_p(np.arange(d), d)

    def phi_at(t, th):
        # (d, ...) values of every mode at time t, temperatures th
        x = min(t / g.dt, g.n_t - 1e-12)
        n = int(np.floor(x))
        s = x - n
        return g.interp(v[n], th) * (1.0 - s) + g.interp(v[n + 1], th) * s

    out = np.empty((len(start_times), d, len(theta_nodes)))
    for a, t0 in enumerate(start_times):
        n0 = int(round(t0 / g.dt))
        for i in range(d):
            th = np.asarray(theta_nodes, dtype=float).copy()
            total = np.zeros_like(th)
            for n in range(n0, g.n_t):
                for s in range(substeps):
                    t = g.times[n] + s * h
                    mid = dynamics.advance_flow(g.times[n], i, th, 0.5 * h, ph)
                    vals = phi_at(t + 0.5 * h, mid)
                    f = dynamics.running_cost_c(g.times[n], i, mid, cfg) + power[i] * lam[n]
                    for j in range(d):
                        if j == i:
                            continue
                        f = f - jc.H(vals[i] - vals[j])
                        f = f + dynamics.hat_alpha_cfg(cfg, i, j, mid) * (vals[j] - vals[i])
                    total += h * f
                    th = dynamics.advance_flow(g.times[n], i, th, h, ph)
            total += dynamics.terminal_cost_g(i, th, cfg)
            start = phi_at(t0, np.asarray(theta_nodes, dtype=float))[i]
            out[a, i] = np.abs(start - total)
    return out
