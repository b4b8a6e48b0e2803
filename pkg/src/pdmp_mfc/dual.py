"""Dual decomposition of the mean-field problem and the stochastic Uzawa ascent.

For a price path ``lambda`` the Lagrangian splits into a pointwise problem in
the target consumption ``v`` and an individual control problem solved by the
backward sweep. The dual gradient is the consumption mismatch
``U = E[p(t, X_t)] - v[lambda](t)``, estimated by Monte Carlo or, for
verification, by the forward density.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, hjb, simulator
from .core import DualPath, ScenarioConfig, ValueField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingCost:
    """``f(t, e) = kappa (e - r_t)^2`` or no coupling at all."""

    kind: str
    kappa: float = 1.0
    r: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("tracking_quadratic", "none"):
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "tracking_quadratic" and not self.kappa > 0:
            raise ValueError("quadratic tracking needs kappa > 0")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "CouplingCost":
        c = cfg.costs
        if not c.tracking:
            return cls("none")
        if not hasattr(c.reference, "on_grid"):
            raise ValueError("tracking needs a reference table; resolve 'nominal_mean' first")
        return cls("tracking_quadratic", c.kappa, c.reference.on_grid(cfg.grid))

    def f(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros_like(v)
        return self.kappa * (v - self.r) ** 2


def best_response_v(lam: DualPath | np.ndarray, fc: CouplingCost) -> np.ndarray:
    """Pointwise minimiser of ``f(t, v) - v lambda(t)``: ``v = r + lambda / (2 kappa)``."""
    if fc.kind == "none":
        raise ValueError("no coupling cost: the dual loop does not apply")
    lam = lam.lam if isinstance(lam, DualPath) else np.asarray(lam, dtype=float)
    return fc.r + lam / (2.0 * fc.kappa)


def step_sizes(a: float, K: int) -> np.ndarray:
    """``rho_k = a / (k + 1)`` for ``k = 0..K-1``."""
    return a / (np.arange(K) + 1.0)


@dataclass
class Response:
    """Everything computed for one ``lambda``."""

    lam: np.ndarray
    phi: ValueField
    control: ValueField
    consumption: np.ndarray
    v: np.ndarray
    gradient: np.ndarray
    density: ValueField | None = None
    stats: simulator.PopulationStats | None = None


def respond(lam: DualPath | np.ndarray, cfg: ScenarioConfig, *, method: str = "mc",
            M: int | None = None, seed: int | None = None, stream: int = 0,
            workers: int = 1) -> Response:
    """Best response of the population to ``lambda`` and the resulting dual gradient."""
    lam = lam.lam if isinstance(lam, DualPath) else np.asarray(lam, dtype=float)
    fc = CouplingCost.from_config(cfg)
    phi = hjb.solve_phi(lam, cfg)
    control = hjb.extract_control(phi, cfg)
    hjb.check_intensity(control, cfg)
    v = best_response_v(lam, fc)
    density = stats = None
    if method == "density":
        density = hjb.forward_density(control, cfg)
        consumption = hjb.expected_consumption(density, cfg)
    elif method == "mc":
        M = cfg.algo.M if M is None else M
        seed = cfg.algo.seed if seed is None else seed
        stats = simulator.population_stats(control, cfg, M, seed, stream=stream,
                                           workers=workers, lam=lam)
        consumption = stats.consumption
    else:
        raise ValueError(f"unknown method {method!r}")
    return Response(lam, phi, control, consumption, v, consumption - v, density, stats)


def dual_gradient(lam: DualPath | np.ndarray, cfg: ScenarioConfig, M: int | None = None,
                  seed: int | None = None, *, method: str = "mc", stream: int = 0,
                  workers: int = 1) -> np.ndarray:
    """Riesz representative ``U(t) = E[p(t, X_t)] - v[lambda](t)`` of the dual gradient."""
    return respond(lam, cfg, method=method, M=M, seed=seed, stream=stream,
                   workers=workers).gradient


def pairing(U: np.ndarray, mu: np.ndarray, cfg: ScenarioConfig) -> float:
    """``int U mu dt`` with the left-endpoint rule of the backward sweep."""
    return float(np.sum(simulator.time_weights(cfg.grid, "left") * U * mu))


def _coupling_part(lam: np.ndarray, v: np.ndarray, fc: CouplingCost, w: np.ndarray) -> float:
    return float(np.sum(w * (fc.f(v) - v * lam)))


@dataclass(frozen=True)
class DualValue:
    value: float
    stderr: float = 0.0


def dual_value_estimate(lam: DualPath | np.ndarray, cfg: ScenarioConfig, *,
                        method: str = "density", M: int | None = None,
                        seed: int | None = None, stream: int = 0, workers: int = 1,
                        response: Response | None = None) -> DualValue:
    """Dual function ``W(lambda)``.

    The individual part ``E[G(alpha[lambda], X)] + int E[p] lambda`` is
    ``E[phi(0, X_0)]`` for the density method and a sample mean (with its
    standard error) for Monte Carlo.
    """
    lam = lam.lam if isinstance(lam, DualPath) else np.asarray(lam, dtype=float)
    fc = CouplingCost.from_config(cfg)
    w = simulator.time_weights(cfg.grid, "left")
    if response is None:
        response = respond(lam, cfg, method=method, M=M, seed=seed, stream=stream,
                           workers=workers)
    coupling = 0.0 if fc.kind == "none" else _coupling_part(lam, response.v, fc, w)
    if response.density is not None:
        m0 = response.density.values[0]
        return DualValue(float(np.sum(m0 * response.phi.values[0])) + coupling)
    s = response.stats
    per_traj = s.control_left + s.running_left + s.terminal + s.p_lambda_left
    return DualValue(float(per_traj.mean()) + coupling,
                     float(per_traj.std(ddof=1) / np.sqrt(per_traj.size)) if per_traj.size > 1 else np.inf)


def primal_cost(control: ValueField, cfg: ScenarioConfig, *, rule: str = "left") -> float:
    """Mean-field cost ``J(alpha)`` of a control, evaluated with the forward density."""
    fc = CouplingCost.from_config(cfg)
    w = simulator.time_weights(cfg.grid, rule)
    density = hjb.forward_density(control, cfg)
    e = hjb.expected_consumption(density, cfg)
    g = cfg.grid
    t = g.times[:, None, None]
    i = np.arange(g.d)[None, :, None]
    c = dynamics.running_cost_c(t, i, g.thetas[None, None, :], cfg)
    running = float(np.einsum("t,tik,tik->", w, density.values, c))
    term = dynamics.terminal_cost_g(np.arange(g.d)[:, None], g.thetas[None, :], cfg)
    total = running + float(np.sum(density.values[-1] * term))
    total += hjb.expected_control_cost(density, control, cfg, w)
    if fc.kind != "none":
        total += float(np.sum(w * fc.f(e)))
    return total


@dataclass
class UzawaResult:
    lam: np.ndarray
    control: ValueField
    phi: ValueField
    history: list[dict] = field(default_factory=list)


class LambdaDivergence(hjb.DivergenceError):
    pass


def uzawa_run(cfg: ScenarioConfig, K: int | None = None, *, method: str = "mc",
              M: int | None = None, seed: int | None = None, a: float | None = None,
              workers: int = 1, lam0: np.ndarray | None = None) -> UzawaResult:
    """Stochastic dual ascent ``lambda_{k+1} = lambda_k + a / (k + 1) * U_{k+1}``.

    Iteration ``k`` simulates with random stream ``k + 1`` so every iteration
    sees fresh, reproducible noise. The returned control is the best response
    to the final ``lambda``.
    """
    K = cfg.algo.K if K is None else K
    a = cfg.algo.a if a is None else a
    if K < 1:
        raise ValueError("need at least one iteration")
    fc = CouplingCost.from_config(cfg)
    if fc.kind == "none":
        raise ValueError("no coupling cost: solve the decoupled problem directly")
    lam = np.zeros(cfg.grid.n_t + 1) if lam0 is None else np.array(lam0, dtype=float)
    rho = step_sizes(a, K)
    history = []
    start = time.perf_counter()
    for k in range(K):
        resp = respond(lam, cfg, method=method, M=M, seed=seed, stream=k + 1, workers=workers)
        W = dual_value_estimate(lam, cfg, response=resp)
        U = resp.gradient
        history.append({
            "iteration": k,
            "grad_norm": float(np.sqrt(pairing(U, U, cfg))),
            "W_estimate": W.value,
            "tracking_rmse": float(np.sqrt(np.mean((resp.consumption - fc.r) ** 2))),
            "wallclock_s": time.perf_counter() - start,
        })
        lam = lam + rho[k] * U
        bound = np.max(np.abs(lam))
        if not np.isfinite(bound) or bound > cfg.algo.lambda_bound:
            raise LambdaDivergence(f"|lambda| = {bound:.3g} exceeds the bound "
                                   f"{cfg.algo.lambda_bound:g} at iteration {k}")
        logger.debug("uzawa k=%d |U|=%.4g W=%.6g", k, history[-1]["grad_norm"], W.value)
    phi = hjb.solve_phi(lam, cfg)
    control = hjb.extract_control(phi, cfg)
    hjb.check_intensity(control, cfg)
    return UzawaResult(lam, control, phi, history)
