"""The four named experiments and their plot-ready CSV artifacts.

Every scenario writes fixed file names under its output directory plus a
``manifest.json`` holding the configuration, its hash, the seed and package
versions, enough to re-run it bit for bit. Random streams are fixed per
scenario: stream 0 is the nominal population, the dual ascent uses streams
``1..K`` and its final evaluation stream ``K + 1``, and pricing class ``s``
uses stream ``1 + s``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, dynamics, hjb, simulator
from .config import _plain, config_hash
from .core import ScenarioConfig, StepTable, ValueField, validate_config
from .dual import uzawa_run

SCENARIOS = ("nominal", "tracking", "pricing", "pricing3class")
N_DUMP = 3
CLASS_SHIFTS = (0.0, 1.0, 2.0)


class ConfigViolation(ValueError):
    """The configuration breaks one or more named invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ScenarioResult:
    name: str
    times: np.ndarray
    series: dict[str, np.ndarray]
    files: list[Path] = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def fmt(x: float) -> str:
    """Six significant digits, positional notation, no trailing zeros."""
    return np.format_float_positional(float(x) + 0.0, precision=6, unique=False,
                                      fractional=False, trim="-")


def emit_series(path: str | Path, times: np.ndarray, series: dict[str, np.ndarray]) -> Path:
    """Write ``time_h`` followed by the given columns, in insertion order."""
    if not series:
        raise ValueError("emit_series needs at least one series")
    times = np.asarray(times, dtype=float)
    cols = [np.asarray(v, dtype=float) for v in series.values()]
    for name, col in zip(series, cols):
        if col.shape != times.shape:
            raise ValueError(f"series {name!r} has shape {col.shape}, expected {times.shape}")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_h", *series])
        for k in range(times.size):
            w.writerow([fmt(times[k]), *(fmt(c[k]) for c in cols)])
    return path


def read_series(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, k] for k, name in enumerate(header)}


def emit_field(path: Path, f: ValueField, *, target_wise: bool = False) -> Path:
    """Long-format dump ``time_h, mode[, target], theta_C, value``."""
    g = f.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if target_wise:
            w.writerow(["time_h", "mode", "target", "theta_C", "value"])
            for n, i, j, k in np.ndindex(f.values.shape):
                if i != j:
                    w.writerow([fmt(g.times[n]), i, j, fmt(g.thetas[k]), fmt(f.values[n, i, j, k])])
        else:
            w.writerow(["time_h", "mode", "theta_C", "value"])
            for n, i, k in np.ndindex(f.values.shape):
                w.writerow([fmt(g.times[n]), i, fmt(g.thetas[k]), fmt(f.values[n, i, k])])
    return path


def emit_trajectories(path: Path, modes: np.ndarray, thetas: np.ndarray, times: np.ndarray) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["traj_id", "time_h", "mode", "theta_C"])
        for q in range(modes.shape[0]):
            for n in range(times.size):
                w.writerow([q, fmt(times[n]), int(modes[q, n]), fmt(thetas[q, n])])
    return path


def total_intensity(control: ValueField, cfg: ScenarioConfig) -> ValueField:
    """``alpha + alpha_hat`` on the grid, for the heat-map dumps."""
    g = cfg.grid
    i = np.arange(g.d)[:, None, None]
    j = np.arange(g.d)[None, :, None]
    hat = dynamics.hat_alpha_cfg(cfg, i, j, g.thetas[None, None, :])
    return ValueField(control.values + hat[None], control.kind, g)


def tracking_rmse(e: np.ndarray, r: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(e) - np.asarray(r)) ** 2)))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, name: str, cfg: ScenarioConfig, files: list[Path], extra: dict) -> Path:
    data = {
        "scenario": name,
        "seed": cfg.algo.seed,
        "M": cfg.algo.M,
        "K": cfg.algo.K,
        "config_sha256": config_hash(cfg),
        "config": _plain(cfg),
        "versions": {"pdmp_mfc": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "files": {p.name: _sha256(p) for p in files},
        **extra,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def scenario_config(name: str, cfg: ScenarioConfig) -> ScenarioConfig:
    """Switch the cost terms a scenario needs, then validate."""
    if name not in SCENARIOS:
        raise ConfigViolation([f"scenario: unknown name {name!r} (choose from {', '.join(SCENARIOS)})"])
    c = cfg.costs
    if name == "nominal":
        c = replace(c, tracking=False, running="none")
    elif name == "tracking":
        c = replace(c, tracking=True, running="none")
    else:
        c = replace(c, tracking=False, running="price")
    cfg = replace(cfg, costs=c)
    violations = validate_config(cfg)
    if violations:
        raise ConfigViolation(violations)
    return cfg


def _nominal(cfg: ScenarioConfig, workers: int) -> np.ndarray:
    return simulator.population_stats(None, cfg, cfg.algo.M, cfg.algo.seed, stream=0,
                                      workers=workers).consumption


def _priced_response(cfg: ScenarioConfig, price: StepTable, stream: int, workers: int):
    cfg = replace(cfg, costs=replace(cfg.costs, price=price))
    phi = hjb.solve_phi(np.zeros(cfg.grid.n_t + 1), cfg)
    control = hjb.extract_control(phi, cfg)
    hjb.check_intensity(control, cfg)
    stats = simulator.population_stats(control, cfg, cfg.algo.M, cfg.algo.seed, stream=stream,
                                       workers=workers)
    return phi, control, stats


def run_scenario(name: str, cfg: ScenarioConfig, out_dir: str | Path | None = None, *,
                 workers: int = 1, emit_fields: bool = False, timing: bool = False,
                 n_dump: int = N_DUMP) -> ScenarioResult:
    """Run one named experiment; write its artifacts if ``out_dir`` is given.

    Raises :class:`ConfigViolation` for invalid configurations,
    :class:`hjb.DivergenceError` or ``FloatingPointError`` on numerical
    failure and ``OSError`` when the output cannot be written.
    """
    cfg = scenario_config(name, cfg)
    g = cfg.grid
    t = g.times
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    extras: dict = {}
    fields_out: dict[str, ValueField] = {}

    nominal = _nominal(cfg, workers)
    if name == "nominal":
        series = {"nominal": nominal}
        if out is not None and n_dump > 0:
            modes, thetas = simulator.simulate_paths(None, cfg, np.arange(min(n_dump, cfg.algo.M)),
                                                     cfg.algo.seed, stream=0)
            files.append(emit_trajectories(out / "trajectories.csv", modes, thetas, t))
        if emit_fields:
            fields_out["density"] = hjb.forward_density(None, cfg)

    elif name == "tracking":
        if isinstance(cfg.costs.reference, str):
            r_value = float(np.mean(nominal))
            cfg = replace(cfg, costs=replace(cfg.costs, reference=StepTable.constant(r_value)))
            extras["reference_value"] = r_value
        r = cfg.costs.reference.on_grid(g)
        res = uzawa_run(cfg, workers=workers)
        final = simulator.population_stats(res.control, cfg, cfg.algo.M, cfg.algo.seed,
                                           stream=cfg.algo.K + 1, workers=workers)
        series = {"nominal": nominal, "reference": r, "aggregate": final.consumption}
        extras.update(rmse_nominal=tracking_rmse(nominal, r),
                      rmse_controlled=tracking_rmse(final.consumption, r),
                      history=res.history, lam=res.lam, control=res.control, phi=res.phi)
        if out is not None:
            files.append(emit_series(out / "lambda.csv", t, {"lambda": res.lam}))
            files.append(emit_field(out / "alpha_total.csv", total_intensity(res.control, cfg),
                                    target_wise=True))
            files.append(_emit_history(out / "diagnostics.csv", res.history, timing))
        if emit_fields:
            fields_out.update(phi=res.phi, alpha=res.control,
                              density=hjb.forward_density(res.control, cfg))

    else:
        shifts = CLASS_SHIFTS if name == "pricing3class" else CLASS_SHIFTS[:1]
        prices, classes = [], []
        for s, shift in enumerate(shifts):
            price = cfg.costs.price.shifted(shift)
            phi, control, stats = _priced_response(cfg, price, 1 + s, workers)
            prices.append(price.on_grid(g))
            classes.append(stats.consumption)
            if s == 0 and emit_fields:
                fields_out.update(phi=phi, alpha=control,
                                  density=hjb.forward_density(control, cfg))
        if name == "pricing":
            series = {"nominal": nominal, "aggregate": classes[0], "price": prices[0]}
        else:
            three = (classes[0] + classes[1] + classes[2]) / 3.0
            series = {"nominal": nominal, "one_price": classes[0], "three_prices": three}
            series.update({f"class_{s}": a for s, a in enumerate(classes)})
            if out is not None:
                files.append(emit_series(out / "prices.csv", t,
                                         {f"price_{s}": p for s, p in enumerate(prices)}))

    for key, col in series.items():
        if key in ("price", "reference"):
            continue
        if np.any(col < 0) or np.any(col > 1):
            raise FloatingPointError(f"aggregate series {key!r} left [0, 1]")
    if out is not None:
        files.insert(0, emit_series(out / "aggregate.csv", t, series))
        for key, f in fields_out.items():
            files.append(emit_field(out / f"{key}.csv", f, target_wise=(key == "alpha")))
        extra = {k: v for k, v in extras.items() if isinstance(v, float)}
        files.append(_manifest(out, name, cfg, files, extra))
    return ScenarioResult(name, t, series, files, extras)


def _emit_history(path: Path, history: list[dict], timing: bool) -> Path:
    cols = ["iteration", "grad_norm", "W_estimate", "tracking_rmse"]
    if timing:
        cols.append("wallclock_s")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in history:
            w.writerow([row["iteration"], *(fmt(row[c]) for c in cols[1:])])
    return path

