"""Scenario configuration files.

Configs are YAML with flat sections ``grid``, ``physics``, ``bounds``,
``costs`` and ``algo``. Every dimensioned quantity carries its unit as a
string (``"2 min"``, ``"12 degC/h"``, ``"0.02 /h"``); values are converted to
hours and degrees Celsius here and nowhere else. Time tables are given as
``{unit: ..., knots: [[hour, value], ...]}`` or ``{unit: ..., file: x.csv}``
where the CSV has a header and ``(hour, value)`` rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import fields, is_dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .core import (Algo, Bounds, Costs, Grid, JumpCost, Physics, ScenarioConfig, StepTable,
                   TerminalCost)


class ConfigError(ValueError):
    """Malformed or incomplete configuration file."""


# factor converting the given unit to the canonical one of each dimension
_UNITS = {
    "time": {"h": 1.0, "hour": 1.0, "hours": 1.0, "min": 1 / 60, "s": 1 / 3600},
    "rate": {"/h": 1.0, "1/h": 1.0, "/min": 60.0, "1/min": 60.0, "/s": 3600.0, "1/s": 3600.0},
    "temperature": {"degC": 1.0, "C": 1.0},
    "temperature_rate": {"degC/h": 1.0, "C/h": 1.0, "degC/min": 60.0, "C/min": 60.0},
    "dimensionless": {"": 1.0, "1": 1.0},
}

_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*(\S*)\s*$")


def parse_quantity(value: Any, dimension: str, where: str) -> float:
    """Convert ``"<number> <unit>"`` into the canonical unit of ``dimension``."""
    table = _UNITS[dimension]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if dimension != "dimensionless":
            raise ConfigError(f"{where}: a unit is required (e.g. '{value} {next(iter(table))}')")
        return float(value)
    m = _QUANTITY.match(str(value))
    if not m:
        raise ConfigError(f"{where}: cannot parse quantity {value!r}")
    number, unit = m.groups()
    if unit not in table:
        raise ConfigError(f"{where}: unit {unit!r} is not a {dimension} unit ({', '.join(table)})")
    return float(number) * table[unit]


def _table(spec: Any, dimension: str, where: str, base: Path | None) -> StepTable:
    if not isinstance(spec, dict) or "unit" not in spec:
        raise ConfigError(f"{where}: tables need a 'unit' and 'knots' or 'file'")
    factor = parse_quantity(f"1 {spec['unit']}".strip(), dimension, where)
    if "knots" in spec:
        rows = spec["knots"]
    elif "file" in spec:
        path = Path(spec["file"])
        if base is not None and not path.is_absolute():
            path = base / path
        rows = read_table_csv(path)
    else:
        raise ConfigError(f"{where}: table needs 'knots' or 'file'")
    try:
        hours = tuple(float(h) for h, _ in rows)
        values = tuple(float(v) * factor for _, v in rows)
        return StepTable(hours, values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def read_table_csv(path: Path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)  # header
        return [(float(r[0]), float(r[1])) for r in reader if r]


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return sec


def from_dict(raw: dict, base: Path | None = None) -> ScenarioConfig:
    g = _section(raw, "grid")
    T = parse_quantity(g.get("horizon", "24 h"), "time", "grid.horizon")
    dt = parse_quantity(g.get("dt", "2 min"), "time", "grid.dt")
    dtheta = parse_quantity(g.get("dtheta", "1 degC"), "temperature", "grid.dtheta")
    lo = parse_quantity(g.get("theta_lo", "45 degC"), "temperature", "grid.theta_lo")
    hi = parse_quantity(g.get("theta_hi", "70 degC"), "temperature", "grid.theta_hi")
    if dt <= 0 or dtheta <= 0:
        raise ConfigError("grid.dt/dtheta: steps must be positive")
    n_t = int(round(T / dt))
    n_theta = int(round((hi - lo) / dtheta))
    if abs(n_t * dt - T) > 1e-9 * T or abs(n_theta * dtheta - (hi - lo)) > 1e-9 * max(1.0, hi - lo):
        raise ConfigError("grid: horizon and temperature range must be multiples of dt and dtheta")
    grid = Grid(T, n_t, lo, hi, n_theta, int(g.get("modes", 2)))

    p = _section(raw, "physics")
    physics = Physics(
        sigmaP=parse_quantity(p.get("sigmaP", "12 degC/h"), "temperature_rate", "physics.sigmaP"),
        rho=parse_quantity(p.get("rho", "0.02 /h"), "rate", "physics.rho"),
        theta_amb=parse_quantity(p.get("theta_amb", "20 degC"), "temperature", "physics.theta_amb"),
        theta_in=parse_quantity(p.get("theta_in", "15 degC"), "temperature", "physics.theta_in"),
        eps=(_table(p["eps"], "rate", "physics.eps", base) if "eps" in p
             else Physics().eps),
    )

    b = _section(raw, "bounds")
    ramp = b.get("ramp_width")
    bounds = Bounds(
        theta_min=parse_quantity(b.get("theta_min", "50 degC"), "temperature", "bounds.theta_min"),
        theta_max=parse_quantity(b.get("theta_max", "65 degC"), "temperature", "bounds.theta_max"),
        peak=parse_quantity(b.get("peak", "12 /h"), "rate", "bounds.peak"),
        ramp_width=None if ramp is None else parse_quantity(ramp, "temperature", "bounds.ramp_width"),
    )

    c = _section(raw, "costs")
    ref = c.get("reference")
    if isinstance(ref, dict):
        ref = _table(ref, "dimensionless", "costs.reference", base)
    elif ref not in (None, "nominal_mean"):
        raise ConfigError("costs.reference: expected a table or 'nominal_mean'")
    price = c.get("price")
    if price is not None:
        price = _table(price, "dimensionless", "costs.price", base)
    term = c.get("terminal") or {}
    jump = c.get("jump_cost", {"kind": "quadratic"})
    if jump.get("kind", "quadratic") != "quadratic":
        raise ConfigError("costs.jump_cost: only 'quadratic' can be configured from a file")
    costs = Costs(
        tracking=bool(c.get("tracking", False)),
        kappa=parse_quantity(c.get("kappa", 1.0), "dimensionless", "costs.kappa"),
        reference=ref,
        running=str(c.get("running", "none")),
        price=price,
        terminal=TerminalCost(tuple(float(x) for x in term.get("offset", ())),
                              tuple(float(x) for x in term.get("slope", ()))),
        jump_cost=JumpCost.quadratic(float(jump.get("scale", 1.0))),
    )

    a = _section(raw, "algo")
    algo = Algo(
        M=int(a.get("M", 10_000)),
        K=int(a.get("K", 100)),
        a=float(a.get("a", 1.0)),
        seed=int(a.get("seed", 0)),
        on_probability=float(a.get("on_probability", 0.38)),
        lambda_bound=float(a.get("lambda_bound", 1e6)),
        phi_bound=float(a.get("phi_bound", 1e8)),
    )
    return ScenarioConfig(grid, physics, bounds, costs, algo)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return from_dict(raw, base=path.parent)


def default_config() -> ScenarioConfig:
    """The shipped water-heater configuration."""
    text = resources.files("pdmp_mfc").joinpath("data/default.yaml").read_text()
    return from_dict(yaml.safe_load(text))


def _plain(obj: Any) -> Any:
    if isinstance(obj, JumpCost):
        return {"kind": obj.kind, "scale": obj.scale}
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the resolved configuration (canonical JSON)."""
    blob = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def with_overrides(cfg: ScenarioConfig, *, seed: int | None = None, M: int | None = None,
                   K: int | None = None) -> ScenarioConfig:
    algo = cfg.algo
    if seed is not None:
        algo = replace(algo, seed=seed)
    if M is not None:
        algo = replace(algo, M=M)
    if K is not None:
        algo = replace(algo, K=K)
    return replace(cfg, algo=algo)


__all__ = ["ConfigError", "config_hash", "default_config", "from_dict", "load_config",
           "parse_quantity", "read_table_csv", "with_overrides"]
