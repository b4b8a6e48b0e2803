"""Monte Carlo simulation of heater populations under a jump-intensity field.

Each trajectory draws its randomness from a counter-based stream keyed by
``(seed, stream, trajectory index, step)``, so results do not depend on how
trajectories are batched or spread over workers.

Per step of length ``dt`` a heater in mode ``i`` at ``theta``:

1. reads the rates ``alpha_j + alpha_hat_j`` at the step start,
2. follows the exact flow of its current mode for ``dt``,
3. switches to ``j`` with probability ``dt * (alpha_j + alpha_hat_j)``.

Step 3 uses the first-order jump probability rather than ``1 - exp(-rate dt)``;
it is the transition law whose dynamic programme is the explicit backward
scheme in :mod:`pdmp_mfc.hjb`, and it is a valid probability under the
intensity condition ``dt * total_rate <= 1``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .core import FieldKind, ScenarioConfig, StatePoint, ValueField

logger = logging.getLogger(__name__)

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
CHUNK = 1 << 14


def _mix_int(x: int) -> int:
    x &= _MASK
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _mix(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps modulo 2**64, which is what splitmix64 needs
    x = x ^ (x >> np.uint64(30))
    x = x * np.uint64(0xBF58476D1CE4E5B9)
    x = x ^ (x >> np.uint64(27))
    x = x * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@dataclass(frozen=True)
class RandomStream:
    """Counter-based uniform stream for one trajectory.

    ``stream`` separates independent uses of the same seed (for example the
    iterations of the dual ascent).
    """

    seed: int
    index: int = 0
    stream: int = 0


class StreamBatch:
    """Vectorised counterpart of :class:`RandomStream` for many trajectories."""

    def __init__(self, seed: int, indices: np.ndarray, stream: int = 0):
        base = _mix_int(_mix_int(seed * _GOLDEN + 1) ^ ((stream + 1) * 0xD1B54A32D192ED03))
        idx = np.asarray(indices, dtype=np.uint64)
        self._keys = _mix(np.uint64(base) ^ (idx * np.uint64(_GOLDEN)))

    def uniform(self, counter: int) -> np.ndarray:
        bits = _mix(self._keys + np.uint64((counter * 0x632BE59BD9B4E019) & _MASK))
        return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class Trajectory:
    """One piecewise deterministic path sampled on the time grid.

    ``modes[k]`` is the mode on the ``k``-th segment; segment ``k > 0`` starts
    at ``jump_times[k - 1]``.
    """

    jump_times: tuple[float, ...]
    modes: tuple[int, ...]
    theta_samples: np.ndarray
    initial: StatePoint
    mode_samples: np.ndarray = field(repr=False, default=None)

    def mode_at(self, n: int) -> int:
        return int(self.mode_samples[n])


@dataclass
class PopulationStats:
    """Per-time and per-trajectory summaries of a simulated population.

    Cost arrays hold one entry per trajectory; ``*_left`` integrate with the
    left-endpoint rule of the backward scheme, ``*_trap`` with the trapezoid
    rule.
    """

    consumption: np.ndarray
    running_left: np.ndarray
    running_trap: np.ndarray
    control_left: np.ndarray
    control_trap: np.ndarray
    terminal: np.ndarray
    p_lambda_left: np.ndarray
    initial_on: np.ndarray
    out_of_band: int
    samples: int
    theta_seen: tuple[float, float]
    jumps: np.ndarray

    @property
    def M(self) -> int:
        return self.terminal.size

    @property
    def out_of_band_fraction(self) -> float:
        return self.out_of_band / self.samples


def _check_control(control: ValueField | None, cfg: ScenarioConfig) -> np.ndarray | None:
    if control is None:
        return None
    if control.kind is not FieldKind.CONTROL:
        raise ValueError("simulation needs a control_rate field")
    if control.grid != cfg.grid:
        raise ValueError("control field lives on a different grid")
    v = control.values
    if not np.all(np.isfinite(v)):
        raise ValueError("control field has non-finite rates")
    if np.any(v < 0):
        raise ValueError("control field has negative rates")
    return v


def _simulate_chunk(alpha, cfg: ScenarioConfig, indices: np.ndarray, seed: int, stream: int,
                    record: bool, lam: np.ndarray | None, initial: StatePoint | None = None):
    g, ph = cfg.grid, cfg.physics
    d, dt, n_t = g.d, g.dt, g.n_t
    b = cfg.bounds
    rng = StreamBatch(seed, indices, stream)
    m = indices.size
    theta = b.theta_min + (b.theta_max - b.theta_min) * rng.uniform(0)
    mode = (rng.uniform(1) < cfg.algo.on_probability).astype(np.intp)
    if d > 2:
        # initial OFF stays mode 0; ON is the top power level
        mode = mode * (d - 1)
    if initial is not None:
        theta = np.full(m, float(initial.theta))
        mode = np.full(m, int(initial.mode), dtype=np.intp)

    times = g.times
    decay, shift = dynamics.flow_coefficients(times[:, None], np.arange(d)[None, :], dt, ph)
    jc = cfg.costs.jump_cost
    power = np.arange(d) / (d - 1)
    price = cfg.costs.price.on_grid(g) if cfg.costs.running == "price" else None
    lo_bound, hi_bound = dynamics.theta_bounds(cfg)
    w_trap = np.full(n_t + 1, dt)
    w_trap[[0, -1]] *= 0.5

    on_sum = np.zeros(n_t + 1)
    running_left = np.zeros(m)
    running_trap = np.zeros(m)
    control_left = np.zeros(m)
    control_trap = np.zeros(m)
    p_lambda = np.zeros(m)
    jumps = np.zeros(m, dtype=np.int64)
    initial_on = mode.copy()
    band_lo, band_hi = b.theta_min - 2.0, b.theta_max + 2.0
    ramp = cfg.ramp_width
    rows = np.arange(m)
    K = g.n_nodes
    flat = None if alpha is None else alpha.reshape(n_t + 1, -1)
    out_of_band = 0
    seen_lo, seen_hi = np.inf, -np.inf
    if record:
        theta_path = np.empty((m, n_t + 1))
        mode_path = np.empty((m, n_t + 1), dtype=np.int8)

    for n in range(n_t + 1):
        p_now = power[mode]
        on_sum[n] = p_now.sum()
        out_of_band += int(np.count_nonzero((theta < band_lo) | (theta > band_hi)))
        seen_lo = min(seen_lo, float(theta.min()))
        seen_hi = max(seen_hi, float(theta.max()))
        if record:
            theta_path[:, n] = theta
            mode_path[:, n] = mode
        if price is not None:
            c_now = price[n] * p_now
            running_trap += w_trap[n] * c_now
            if n < n_t:
                running_left += dt * c_now

        u = rng.uniform(n + 2) if n < n_t else None
        if d == 2:
            # two modes: a single exit rate towards the other mode
            on = mode == 1
            x = np.where(on, theta - (b.theta_max - ramp), (b.theta_min + ramp) - theta)
            rate = b.peak * np.clip(x * (1.0 / ramp), 0.0, 1.0)
            if alpha is not None:
                idx, w = g.locate(theta)
                base = (mode * d + (1 - mode)) * K + idx
                a = flat[n, base] * (1.0 - w) + flat[n, base + 1] * w
                l_cost = np.where(a > 0, jc.l(a), 0.0)
                rate = rate + a
        else:
            rates = np.zeros((m, d))
            up = np.clip((theta - b.theta_max + ramp) / ramp, 0.0, 1.0)
            down = np.clip((b.theta_min + ramp - theta) / ramp, 0.0, 1.0)
            rates[:, 0] += b.peak * up * (mode == 1)
            rates[:, 1] += b.peak * down * (mode == 0)
            if alpha is not None:
                idx, w = g.locate(theta)
                a = alpha[n, mode, :, idx] * (1.0 - w)[:, None] + alpha[n, mode, :, idx + 1] * w[:, None]
                a[rows, mode] = 0.0
                l_cost = np.where(a > 0, jc.l(a), 0.0).sum(axis=1)
                rates += a
        if alpha is not None:
            control_trap += w_trap[n] * l_cost
        if n == n_t:
            break
        if alpha is not None:
            control_left += dt * l_cost
        if lam is not None:
            p_lambda += dt * lam[n] * p_now

        if d == 2:
            prob = dt * rate
            target = np.where(u < prob, 1 - mode, mode)
        else:
            prob = np.cumsum(dt * rates, axis=1)
            target = np.minimum(np.sum(u[:, None] >= prob, axis=1), d)
            target = np.where(target == d, mode, target)
        worst = prob.max()
        if worst > 1.0 + 1e-12:
            raise FloatingPointError(
                f"jump probability {worst:.3g} > 1 at t={times[n]:.4g} h; "
                "the intensity condition dt*(alpha+alpha_hat) <= 1 is violated")
        if d == 2:
            theta = theta * np.where(on, decay[n, 1], decay[n, 0]) + np.where(on, shift[n, 1], shift[n, 0])
        else:
            theta = theta * decay[n, mode] + shift[n, mode]
        jumps += target != mode
        mode = target

    if seen_lo < lo_bound - 1e-9 or seen_hi > hi_bound + 1e-9:
        raise AssertionError(f"temperature left the a.s. bounds: [{seen_lo}, {seen_hi}]")
    terminal = dynamics.terminal_cost_g(mode, theta, cfg) * np.ones(m)
    out = dict(on_sum=on_sum, running_left=running_left, running_trap=running_trap,
               control_left=control_left, control_trap=control_trap, terminal=terminal,
               p_lambda=p_lambda, initial_on=initial_on, out_of_band=out_of_band,
               seen=(seen_lo, seen_hi), jumps=jumps)
    if record:
        out["theta_path"] = theta_path
        out["mode_path"] = mode_path
    return out


def _run_chunks(alpha, cfg, indices, seed, stream, record, lam, workers, initial=None):
    chunks = [indices[k:k + CHUNK] for k in range(0, indices.size, CHUNK)]

    def job(ix):
        return _simulate_chunk(alpha, cfg, ix, seed, stream, record, lam, initial)

    if workers <= 1 or len(chunks) == 1:
        return [job(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, chunks))


def population_stats(control: ValueField | None, cfg: ScenarioConfig, M: int, seed: int,
                     stream: int = 0, workers: int = 1, lam: np.ndarray | None = None,
                     initial: StatePoint | None = None) -> PopulationStats:
    """Simulate ``M`` heaters and keep only aggregate and per-trajectory cost summaries.

    ``initial`` pins every heater to one state instead of sampling the initial law.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    alpha = _check_control(control, cfg)
    parts = _run_chunks(alpha, cfg, np.arange(M), seed, stream, False, lam, workers, initial)
    cat = lambda key: np.concatenate([p[key] for p in parts])  # noqa: E731
    on_sum = np.sum([p["on_sum"] for p in parts], axis=0)
    return PopulationStats(
        consumption=on_sum / M,
        running_left=cat("running_left"), running_trap=cat("running_trap"),
        control_left=cat("control_left"), control_trap=cat("control_trap"),
        terminal=cat("terminal"), p_lambda_left=cat("p_lambda"),
        initial_on=cat("initial_on"),
        out_of_band=sum(p["out_of_band"] for p in parts),
        samples=M * (cfg.grid.n_t + 1),
        theta_seen=(min(p["seen"][0] for p in parts), max(p["seen"][1] for p in parts)),
        jumps=cat("jumps"),
    )


def simulate_paths(control: ValueField | None, cfg: ScenarioConfig, indices, seed: int,
                   stream: int = 0, workers: int = 1,
                   initial: StatePoint | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Full ``(modes, thetas)`` sample paths, each ``(len(indices), n_t + 1)``."""
    alpha = _check_control(control, cfg)
    indices = np.asarray(indices, dtype=np.int64)
    parts = _run_chunks(alpha, cfg, indices, seed, stream, True, None, workers, initial)
    return (np.concatenate([p["mode_path"] for p in parts]),
            np.concatenate([p["theta_path"] for p in parts]))


def _to_trajectory(modes: np.ndarray, thetas: np.ndarray, times: np.ndarray) -> Trajectory:
    switch = np.flatnonzero(modes[1:] != modes[:-1]) + 1
    return Trajectory(
        jump_times=tuple(float(times[k]) for k in switch),
        modes=(int(modes[0]),) + tuple(int(modes[k]) for k in switch),
        theta_samples=thetas.copy(),
        initial=StatePoint(int(modes[0]), float(thetas[0])),
        mode_samples=modes.astype(np.int64),
    )


def simulate_trajectory(control: ValueField | None, cfg: ScenarioConfig,
                        stream: RandomStream) -> Trajectory:
    modes, thetas = simulate_paths(control, cfg, [stream.index], stream.seed, stream.stream)
    return _to_trajectory(modes[0], thetas[0], cfg.grid.times)


def simulate_population(control: ValueField | None, cfg: ScenarioConfig, M: int, seed: int,
                        stream: int = 0, workers: int = 1,
                        initial: StatePoint | None = None) -> list[Trajectory]:
    """``M`` i.i.d. trajectories; trajectory ``k`` uses ``RandomStream(seed, k, stream)``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    modes, thetas = simulate_paths(control, cfg, np.arange(M), seed, stream, workers, initial)
    times = cfg.grid.times
    return [_to_trajectory(modes[k], thetas[k], times) for k in range(M)]


def aggregate_consumption(trajs: list[Trajectory], d: int = 2) -> np.ndarray:
    """Mean normalised consumption of the population at every grid time."""
    if not trajs:
        raise ValueError("cannot aggregate an empty population")
    modes = np.stack([t.mode_samples for t in trajs])
    return dynamics.consumption_p(modes, d).mean(axis=0)


def coupling_cost(consumption: np.ndarray, cfg: ScenarioConfig, weights: np.ndarray) -> float:
    """``int f(t, e(t)) dt`` for the configured coupling cost (zero without tracking)."""
    c = cfg.costs
    if not c.tracking:
        return 0.0
    r = c.reference.on_grid(cfg.grid)
    return float(np.sum(weights * c.kappa * (consumption - r) ** 2))


def time_weights(grid, rule: str = "trapezoid") -> np.ndarray:
    w = np.full(grid.n_t + 1, grid.dt)
    if rule == "trapezoid":
        w[[0, -1]] *= 0.5
    elif rule == "left":
        w[-1] = 0.0
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return w


def estimate_cost_JN(trajs: list[Trajectory], control: ValueField | None, cfg: ScenarioConfig,
                     rule: str = "trapezoid") -> float:
    """Finite-population cost: coupling cost of the empirical mean plus mean individual cost.

    The jump-cost term charges the control part ``alpha`` only; the safety
    intensity is free.
    """
    g = cfg.grid
    w = time_weights(g, rule)
    modes = np.stack([t.mode_samples for t in trajs])
    thetas = np.stack([t.theta_samples for t in trajs])
    p = dynamics.consumption_p(modes, g.d)
    total = coupling_cost(p.mean(axis=0), cfg, w)
    running = dynamics.running_cost_c(g.times[None, :], modes, thetas, cfg)
    if control is not None:
        alpha = _check_control(control, cfg)
        idx, wt = g.locate(thetas)
        n = np.broadcast_to(np.arange(g.n_t + 1), modes.shape)
        for j in range(g.d):
            a = alpha[n, modes, j, idx] * (1.0 - wt) + alpha[n, modes, j, idx + 1] * wt
            running = running + np.where(modes == j, 0.0, cfg.costs.jump_cost.L(a))
    indiv = running @ w + dynamics.terminal_cost_g(modes[:, -1], thetas[:, -1], cfg)
    total += float(np.mean(indiv))
    if not np.isfinite(total):
        raise FloatingPointError("non-finite cost estimate")
    return total
