"""Domain types shared by every module: grids, fields, jump costs, scenario config.

All times are in hours, temperatures in degrees Celsius and rates in 1/h.
Conversion from other units happens once, in :mod:`pdmp_mfc.config`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

OFF = 0
ON = 1


@dataclass(frozen=True)
class Mode:
    index: int
    d: int = 2

    def __post_init__(self) -> None:
        if not 0 <= self.index < self.d:
            raise ValueError(f"mode index {self.index} outside 0..{self.d - 1}")


@dataclass(frozen=True)
class StatePoint:
    mode: int
    theta: float


@dataclass(frozen=True)
class Grid:
    """Uniform time x temperature grid.

    Temperature nodes are ``theta_lo + k * dtheta`` for ``k = 0..n_theta``
    (``n_theta`` cells, ``n_theta + 1`` nodes); time nodes are ``k * dt`` for
    ``k = 0..n_t``.
    """

    T: float
    n_t: int
    theta_lo: float
    theta_hi: float
    n_theta: int
    d: int = 2

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dtheta(self) -> float:
        return (self.theta_hi - self.theta_lo) / self.n_theta

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def thetas(self) -> np.ndarray:
        return np.linspace(self.theta_lo, self.theta_hi, self.n_theta + 1)

    @property
    def n_nodes(self) -> int:
        return self.n_theta + 1

    def locate(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Left node index and linear weight of the right node, clamped to the grid."""
        x = (np.clip(theta, self.theta_lo, self.theta_hi) - self.theta_lo) / self.dtheta
        idx = np.minimum(np.floor(x).astype(np.intp), self.n_theta - 1)
        return idx, x - idx

    def interp(self, values: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Linear interpolation of nodal ``values`` (last axis) at ``theta``."""
        idx, w = self.locate(theta)
        return values[..., idx] * (1.0 - w) + values[..., idx + 1] * w

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.T, self.n_t * factor, self.theta_lo, self.theta_hi,
                    self.n_theta * factor, self.d)

    def with_theta_range(self, lo: float, hi: float) -> "Grid":
        n = int(round((hi - lo) / self.dtheta))
        return Grid(self.T, self.n_t, lo, lo + n * self.dtheta, n, self.d)


@dataclass(frozen=True)
class StepTable:
    """Piecewise-constant time table: ``values[k]`` holds on ``[hours[k], hours[k+1])``.

    The first knot must be at or before 0; the last value extends to +inf.
    """

    hours: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.hours) != len(self.values) or not self.hours:
            raise ValueError("table needs matching, non-empty hours and values")
        if any(b <= a for a, b in zip(self.hours, self.hours[1:])):
            raise ValueError("table hours must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "StepTable":
        return cls((0.0,), (float(value),))

    @classmethod
    def window(cls, start: float, stop: float, inside: float, outside: float) -> "StepTable":
        return cls((0.0, start, stop), (outside, inside, outside))

    def __call__(self, t):
        k = np.searchsorted(np.asarray(self.hours), t, side="right") - 1
        return np.asarray(self.values)[np.maximum(k, 0)]

    def on_grid(self, grid: Grid) -> np.ndarray:
        return self(grid.times).astype(float)

    def scaled(self, factor: float) -> "StepTable":
        return StepTable(self.hours, tuple(v * factor for v in self.values))

    def shifted(self, hours: float) -> "StepTable":
        """Table delayed by ``hours`` (the value at 0 keeps the original first value)."""
        return StepTable((0.0,) + tuple(h + hours for h in self.hours[1:]), self.values)

    @property
    def min(self) -> float:
        return min(self.values)

    @property
    def max(self) -> float:
        return max(self.values)


class FieldKind(enum.Enum):
    VALUE = "value_phi"
    CONTROL = "control_rate"
    DENSITY = "density"


@dataclass(frozen=True, eq=False)
class ValueField:
    """A field tabulated on the grid.

    ``values`` is ``(n_t + 1, d, n_nodes)`` for value functions and densities
    and ``(n_t + 1, d, d, n_nodes)`` for control rates, indexed
    ``[time, source mode, target mode, temperature]``.
    """

    values: np.ndarray
    kind: FieldKind
    grid: Grid

    def __post_init__(self) -> None:
        g = self.grid
        expected = ((g.n_t + 1, g.d, g.d, g.n_nodes) if self.kind is FieldKind.CONTROL
                    else (g.n_t + 1, g.d, g.n_nodes))
        if self.values.shape != expected:
            raise ValueError(f"{self.kind.value} field has shape {self.values.shape}, expected {expected}")

    @classmethod
    def zeros(cls, kind: FieldKind, grid: Grid) -> "ValueField":
        shape = ((grid.n_t + 1, grid.d, grid.d, grid.n_nodes) if kind is FieldKind.CONTROL
                 else (grid.n_t + 1, grid.d, grid.n_nodes))
        return cls(np.zeros(shape), kind, grid)

    def check(self, tol: float = 1e-10) -> list[str]:
        """Invariant violations of this field (empty when it is well formed)."""
        v = self.values
        problems = []
        if not np.all(np.isfinite(v)):
            problems.append("non-finite entries")
        if self.kind is FieldKind.CONTROL:
            if np.any(v < 0):
                problems.append("negative control rate")
            diag = np.einsum("tiik->tik", v)
            if np.any(diag != 0):
                problems.append("non-zero diagonal control rate")
        elif self.kind is FieldKind.DENSITY:
            if np.any(v < -tol):
                problems.append("negative density mass")
            total = v.sum(axis=(1, 2))
            if np.max(np.abs(total - 1.0)) > tol:
                problems.append("density mass is not 1")
        return problems


@dataclass(frozen=True)
class DualPath:
    lam: np.ndarray

    def __post_init__(self) -> None:
        if self.lam.ndim != 1 or not np.all(np.isfinite(self.lam)):
            raise ValueError("lambda must be a finite 1-d array")

    @classmethod
    def zeros(cls, grid: Grid) -> "DualPath":
        return cls(np.zeros(grid.n_t + 1))


@dataclass(frozen=True)
class JumpCost:
    """Cost ``l`` of a jump intensity and the conjugate pair ``H``, ``H'``.

    ``L(y) = l(y)`` for ``y > 0``, ``L(0) = 0`` and ``+inf`` for ``y < 0``.
    Custom costs must provide all four callables in closed form.
    """

    l: Callable[[np.ndarray], np.ndarray]
    l_prime: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], np.ndarray]
    H_prime: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    scale: float | None = None

    @classmethod
    def quadratic(cls, scale: float = 1.0) -> "JumpCost":
        """``l(y) = scale * y**2 / 2``; the default cost."""
        if scale <= 0:
            raise ValueError("quadratic jump cost needs a positive scale")
        return cls(
            l=lambda y: 0.5 * scale * np.square(y),
            l_prime=lambda y: scale * np.asarray(y, dtype=float),
            H=lambda x: 0.5 * np.square(np.maximum(x, 0.0)) / scale,
            H_prime=lambda x: np.maximum(x, 0.0) / scale,
            kind="quadratic",
            scale=float(scale),
        )

    def L(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            out = np.where(y > 0, self.l(np.maximum(y, 0.0)), 0.0)
        return np.where(y < 0, np.inf, out)


QUADRATIC = JumpCost.quadratic()


def H_value(x, jc: JumpCost = QUADRATIC):
    """Convex conjugate of the jump cost, ``sup_y (x y - L(y))``."""
    return jc.H(np.asarray(x, dtype=float))


def H_prime(x, jc: JumpCost = QUADRATIC):
    """Optimal jump intensity for a value gap ``x``; never negative."""
    return jc.H_prime(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Physics:
    sigmaP: float = 12.0
    rho: float = 0.01
    theta_amb: float = 20.0
    theta_in: float = 15.0
    eps: StepTable = field(default_factory=lambda: StepTable(
        (0.0, 6.0, 8.0, 19.0, 21.0), (0.015, 0.06, 0.015, 0.06, 0.015)))


@dataclass(frozen=True)
class Bounds:
    theta_min: float = 50.0
    theta_max: float = 65.0
    peak: float = 12.0
    # None means "one temperature cell"
    ramp_width: float | None = None


@dataclass(frozen=True)
class TerminalCost:
    """``g(i, theta) = offset[i] + slope[i] * theta``; zero by default."""

    offset: tuple[float, ...] = ()
    slope: tuple[float, ...] = ()

    def __call__(self, mode, theta):
        theta = np.asarray(theta, dtype=float)
        mode = np.asarray(mode)
        out = np.zeros(np.broadcast(mode, theta).shape)
        if self.offset:
            out = out + np.asarray(self.offset, dtype=float)[mode]
        if self.slope:
            out = out + np.asarray(self.slope, dtype=float)[mode] * theta
        return out

    @property
    def is_zero(self) -> bool:
        return not any(self.offset) and not any(self.slope)


@dataclass(frozen=True)
class Costs:
    """Coupling and individual costs.

    ``tracking`` switches on ``f(t, e) = kappa (e - r_t)^2``; ``running``
    selects ``c``: ``"none"`` or ``"price"`` (``c = price(t) * p``).
    """

    tracking: bool = False
    kappa: float = 1.0
    # a table, or "nominal_mean": the daily mean of the uncontrolled aggregate
    reference: StepTable | str | None = None
    running: str = "none"
    price: StepTable | None = None
    terminal: TerminalCost = field(default_factory=TerminalCost)
    jump_cost: JumpCost = QUADRATIC


@dataclass(frozen=True)
class Algo:
    M: int = 10_000
    K: int = 100
    a: float = 1.0
    seed: int = 0
    on_probability: float = 0.38
    lambda_bound: float = 1e6
    phi_bound: float = 1e8


@dataclass(frozen=True)
class ScenarioConfig:
    grid: Grid
    physics: Physics = field(default_factory=Physics)
    bounds: Bounds = field(default_factory=Bounds)
    costs: Costs = field(default_factory=Costs)
    algo: Algo = field(default_factory=Algo)

    @property
    def ramp_width(self) -> float:
        return self.bounds.ramp_width if self.bounds.ramp_width is not None else self.grid.dtheta


def validate_config(cfg: ScenarioConfig, alpha_bound: float | None = None) -> list[str]:
    """Every violated invariant, one ``"field: condition"`` string each.

    The grid stability conditions are evaluated through
    :func:`pdmp_mfc.hjb.cfl_check`; ``alpha_bound`` defaults to its a-priori bound.
    """
    from . import dynamics, hjb

    g, ph, b, c, a = cfg.grid, cfg.physics, cfg.bounds, cfg.costs, cfg.algo
    out: list[str] = []
    if g.d < 2:
        out.append("grid.d: need at least two modes")
    if not (g.T > 0 and g.n_t >= 1):
        out.append("grid.dt: must be positive")
    if not (g.theta_hi > g.theta_lo and g.n_theta >= 1):
        out.append("grid.theta_lo/theta_hi: need theta_lo < theta_hi")
    if b.theta_min >= b.theta_max:
        out.append(f"bounds.theta_min/theta_max: need theta_min < theta_max (got {b.theta_min} >= {b.theta_max})")
    if b.peak <= 0:
        out.append("bounds.peak: safety intensity peak must be positive")
    if b.ramp_width is not None and b.ramp_width <= 0:
        out.append("bounds.ramp_width: must be positive")
    if ph.sigmaP <= 0:
        out.append("physics.sigmaP: heating rate must be positive")
    if ph.rho < 0:
        out.append("physics.rho: loss rate must be non-negative")
    if ph.eps.min < 0:
        out.append("physics.eps: drain rate must be non-negative")
    if a.M < 1:
        out.append("algo.M: need at least one trajectory")
    if not 0.0 <= a.on_probability <= 1.0:
        out.append("algo.on_probability: must lie in [0, 1]")
    if c.tracking:
        if c.kappa <= 0:
            out.append("costs.kappa: tracking needs kappa > 0")
        if c.reference is None:
            out.append("costs.reference: tracking needs a reference signal")
        elif isinstance(c.reference, str) and c.reference != "nominal_mean":
            out.append(f"costs.reference: unknown reference {c.reference!r}")
    if c.running not in ("none", "price"):
        out.append(f"costs.running: unknown selector {c.running!r}")
    if c.running == "price" and c.price is None:
        out.append("costs.price: price running cost needs a price table")
    if out:
        return out

    lo, hi = dynamics.theta_bounds(cfg)
    if g.theta_lo < lo - 1e-9 or g.theta_hi > hi + 1e-9:
        out.append(f"grid.theta_lo/theta_hi: grid must lie inside the a.s. bounds [{lo:.3g}, {hi:.3g}]")
    if g.theta_lo > b.theta_min or g.theta_hi < b.theta_max:
        out.append("grid.theta_lo/theta_hi: grid must cover [theta_min, theta_max]")
    if alpha_bound is None:
        alpha_bound = hjb.a_priori_alpha_bound(cfg)
    report = hjb.cfl_check(cfg, alpha_bound)
    if not report.cfl_ok:
        out.append(f"grid.dt/dtheta: CFL condition B*dt/dtheta <= 1 violated (B*dt/dtheta = {report.cfl_ratio:.3g})")
    if not report.intensity_ok:
        out.append(f"grid.dt: intensity condition dt*(|alpha|+|alpha_hat|) <= 1 violated "
                   f"(= {report.intensity_ratio:.3g})")
    return out
