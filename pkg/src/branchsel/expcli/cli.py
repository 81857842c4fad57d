"""Command-line experiment runner.

    branchsel run --scenario <name> [--config <file>] [--seed <u64>]
                  [--replicas <n>] [--out <dir>] [--threads <n>]
    branchsel sweep --param L --values 3,4,5,6 [same options]

Exit codes: 0 success, 2 configuration error, 3 population-cap breach,
4 estimation error.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import CapacityError, ConfigError, EstimationError
from .config import build_config, parse_config_file
from .scenarios import _PARAM_TO_SCENARIO, SCENARIOS, run_scenario, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_ESTIMATION = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="master seed (u64)")
    p.add_argument("--replicas", type=int, help="number of replicas")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="branchsel",
        description="Monte Carlo experiments for branching Brownian motion "
                    "with selection")
    sub = ap.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario")
    run_p.add_argument("--scenario", required=True,
                       choices=sorted(SCENARIOS), help="scenario name")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="sweep a selection parameter")
    sweep_p.add_argument("--param", required=True,
                         choices=sorted(_PARAM_TO_SCENARIO),
                         help="parameter to sweep")
    sweep_p.add_argument("--values", required=True,
                         help="comma-separated sweep values")
    _add_common(sweep_p)
    return ap


def _build(scenario_name: str, args) -> "ExperimentConfig":
    sc = SCENARIOS[scenario_name]
    file_kv = parse_config_file(args.config) if args.config else {}
    overrides = {"seed": args.seed, "replicas": args.replicas,
                 "out": args.out, "threads": args.threads}
    return build_config(scenario_name, sc.schema, file_kv, overrides,
                        default_replicas=sc.default_replicas)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "run":
            summary = run_scenario(_build(args.scenario, args))
        else:
            values = [float(v) for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values must list at least one number")
            name, _mode = _PARAM_TO_SCENARIO[args.param]
            cfg = _build(name, args)
            summary = run_sweep(cfg, args.param, values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    _print_summary(summary)
    return EXIT_OK


def _print_summary(summary: dict) -> None:
    cfg = summary["config"]
    print(f"scenario {cfg['scenario']}  seed {cfg['seed']}  "
          f"replicas {cfg['replicas']}")
    results = summary["results"]
    if isinstance(results, dict):
        for key, val in results.items():
            if isinstance(val, float):
                print(f"  {key} = {val:.6g}")
            elif isinstance(val, (list, tuple)) and len(val) <= 12:
                print(f"  {key} = {val}")
            elif not isinstance(val, (list, tuple, dict)):
                print(f"  {key} = {val}")


if __name__ == "__main__":
    sys.exit(main())
