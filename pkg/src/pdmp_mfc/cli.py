"""Command-line entry point: ``pdmp-mfc <scenario> [options]``.

Exit codes: 0 success, 2 configuration violation, 3 numerical divergence,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import hjb
from .config import ConfigError, default_config, load_config, with_overrides
from .scenarios import SCENARIOS, ConfigViolation, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4

logger = logging.getLogger("pdmp_mfc")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdmp-mfc",
                                description="Mean-field control of a water-heater population.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", type=Path, help="YAML config (default: the shipped one)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="override algo.seed")
    p.add_argument("--M", type=int, help="override the population size algo.M")
    p.add_argument("--iterations", type=int, help="override the dual iteration count algo.K")
    p.add_argument("--workers", type=int, default=1, help="simulation threads (results do not depend on it)")
    p.add_argument("--emit-fields", action="store_true", help="also dump phi, alpha and density")
    p.add_argument("--timing", action="store_true",
                   help="add wall-clock columns (makes diagnostics non-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else default_config()
        cfg = with_overrides(cfg, seed=args.seed, M=args.M, K=args.iterations)
        result = run_scenario(args.scenario, cfg, args.out, workers=args.workers,
                              emit_fields=args.emit_fields, timing=args.timing)
    except ConfigViolation as exc:
        print("configuration violates:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (hjb.DivergenceError, FloatingPointError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in result.files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
