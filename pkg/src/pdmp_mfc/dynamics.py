"""Water-heater physics: drift, exact flow, safety intensity, consumption and costs.

The temperature of a heater in mode ``i`` follows the linear ODE

    dtheta/dt = i * sigmaP - rho (theta - theta_amb) - eps(t) (theta - theta_in)

which is integrated exactly over steps on which ``eps`` is constant.
"""

from __future__ import annotations

import numpy as np

from .core import OFF, ON, Physics, ScenarioConfig, StatePoint


def drift(t, mode, theta, ph: Physics):
    """Temperature rate of change in degC/h (vectorised over all arguments)."""
    eps = ph.eps(t)
    return (np.asarray(mode) * ph.sigmaP
            - ph.rho * (np.asarray(theta) - ph.theta_amb)
            - eps * (np.asarray(theta) - ph.theta_in))


def drift_at(t: float, s: StatePoint, ph: Physics) -> float:
    return float(drift(t, s.mode, s.theta, ph))


def flow_coefficients(t, mode, dt: float, ph: Physics):
    """``(decay, shift)`` such that one step of the flow is ``theta * decay + shift``.

    ``eps`` is frozen at its value at ``t`` for the whole step.
    """
    eps = np.asarray(ph.eps(t), dtype=float)
    mode = np.asarray(mode)
    B = ph.rho + eps
    source = mode * ph.sigmaP + ph.rho * ph.theta_amb + eps * ph.theta_in
    with np.errstate(divide="ignore", invalid="ignore"):
        decay = np.exp(-B * dt)
        # shift = theta_eq * (1 - decay); (1 - e^{-B dt}) / B -> dt as B -> 0
        gain = np.where(B > 0, -np.expm1(-B * dt) / np.where(B > 0, B, 1.0), dt)
    decay, shift = np.broadcast_arrays(decay, source * gain)
    return decay, shift


def advance_flow(t, mode, theta, dt: float, ph: Physics):
    """Temperature after ``dt`` hours of deterministic evolution in ``mode``."""
    decay, shift = flow_coefficients(t, mode, dt, ph)
    return np.asarray(theta) * decay + shift


def equilibrium(t, mode, ph: Physics):
    eps = ph.eps(t)
    return (mode * ph.sigmaP + ph.rho * ph.theta_amb + eps * ph.theta_in) / (ph.rho + eps)


def theta_bounds(cfg: ScenarioConfig) -> tuple[float, float]:
    """Almost-sure temperature bounds ``(theta_0, theta_inf)``.

    The lower bound is the coldest equilibrium an OFF heater can approach; the
    upper one the hottest equilibrium of an ON heater. Both are widened to
    include the initial law's support.
    """
    ph, b = cfg.physics, cfg.bounds
    lo = min(ph.theta_in, ph.theta_amb, b.theta_min)
    eps_lo, eps_hi = ph.eps.min, ph.eps.max
    if ph.rho + eps_lo <= 0:
        return lo, np.inf
    hot = max(equilibrium(0.0, ON, _with_eps(ph, e)) for e in (eps_lo, eps_hi))
    return lo, max(hot, b.theta_max)


def _with_eps(ph: Physics, e: float) -> Physics:
    from .core import StepTable
    return Physics(ph.sigmaP, ph.rho, ph.theta_amb, ph.theta_in, StepTable.constant(e))


def hat_alpha(mode, target, theta, theta_min: float, theta_max: float,
              peak: float, ramp_width: float):
    """Safety intensity of a jump ``mode -> target`` at temperature ``theta``.

    Forces ON -> OFF at and above ``theta_max`` and OFF -> ON at and below
    ``theta_min``, with linear ramps of width ``ramp_width`` inside the band.
    Every other transition gets zero.
    """
    theta = np.asarray(theta, dtype=float)
    mode = np.asarray(mode)
    target = np.asarray(target)
    up = np.clip((theta - theta_max + ramp_width) / ramp_width, 0.0, 1.0)
    down = np.clip((theta_min + ramp_width - theta) / ramp_width, 0.0, 1.0)
    switch_off = (mode == ON) & (target == OFF)
    switch_on = (mode == OFF) & (target == ON)
    return peak * np.where(switch_off, up, np.where(switch_on, down, 0.0))


def hat_alpha_cfg(cfg: ScenarioConfig, mode, target, theta):
    b = cfg.bounds
    return hat_alpha(mode, target, theta, b.theta_min, b.theta_max, b.peak, cfg.ramp_width)


def hat_alpha_at(t: float, s: StatePoint, j: int, cfg: ScenarioConfig) -> float:
    del t  # time-homogeneous
    return float(hat_alpha_cfg(cfg, s.mode, j, s.theta))


def consumption_p(mode, d: int = 2):
    """Normalised power: 1 when fully ON, 0 when OFF (always 0 with a single mode)."""
    mode = np.asarray(mode, dtype=float)
    return mode / (d - 1) if d > 1 else np.zeros_like(mode)


def running_cost_c(t, mode, theta, cfg: ScenarioConfig):
    """Individual cost rate ``c``: zero, or price times consumption."""
    c = cfg.costs
    shape = np.broadcast(np.asarray(t), np.asarray(mode), np.asarray(theta)).shape
    if c.running == "price":
        return np.broadcast_to(c.price(t) * consumption_p(mode, cfg.grid.d), shape).astype(float)
    return np.zeros(shape)


def terminal_cost_g(mode, theta, cfg: ScenarioConfig):
    return cfg.costs.terminal(mode, theta)
