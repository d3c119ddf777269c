"""
Command-line surface.

    run --scenario <name|file.json> --out <dir> [--seed S] [--format csv|json]
    sweep --scenario <name|file.json> --param <name> --values <v1,v2,...> [--out <dir>]
    list-scenarios
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from app.core.config import settings
from app.core.exceptions import EXIT_FAILURE, EXIT_OK, AdiabaticError
from app.core.logging import logger
from app.core.monitoring import record_run
from app.services.runner import SWEEPABLES, load_scenario, run, sweep, write_run, write_sweep
from app.services.scenarios import BUILTINS

def _values(text: str) -> List[float]:
    items = [item.strip() for item in text.split(",") if item.strip()]
    try:
        return [float(item) for item in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adiabatquant", description=f"{settings.APP_NAME} scenario runner")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run one scenario")
    run_parser.add_argument("--scenario", required=True, help="Builtin name or scenario JSON file")
    run_parser.add_argument("--out", type=Path, default=None, help="Output directory (default: OUTPUT_DIR)")
    run_parser.add_argument("--seed", type=int, default=None)
    run_parser.add_argument("--format", choices=["csv", "json"], default="csv")

    sweep_parser = commands.add_parser("sweep", help="Run a scenario over a list of parameter values")
    sweep_parser.add_argument("--scenario", required=True)
    sweep_parser.add_argument("--param", required=True, help=f"One of: {', '.join(SWEEPABLES)}")
    sweep_parser.add_argument("--values", required=True, type=_values)
    sweep_parser.add_argument("--out", type=Path, default=None)
    sweep_parser.add_argument("--seed", type=int, default=None)

    commands.add_parser("list-scenarios", help="List builtin scenarios")
    return parser

def _run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out = args.out or settings.OUTPUT_DIR
    with record_run(scenario.name):
        result = run(scenario, args.seed)
    for path in write_run(result, out, args.format):
        print(path)
    print(json.dumps({"final_fidelity": result.final_fidelity, "bound_holds": result.report.bound_holds}))
    return EXIT_OK

def _sweep(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out = args.out or settings.OUTPUT_DIR
    with record_run(scenario.name, kind="sweep"):
        results = sweep(scenario, args.param, args.values, args.seed)
    print(write_sweep(results, scenario, args.param, args.values, out))
    return EXIT_OK

def _list() -> int:
    for name, scenario in BUILTINS.items():
        print(f"{name}\t{scenario.description}")
    return EXIT_OK

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on bad usage
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "sweep":
            return _sweep(args)
        return _list()
    except AdiabaticError as e:
        logger.error(
            "Command failed",
            extra={"command": args.command, "error_code": e.code, "error_details": e.details}
        )
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE

if __name__ == "__main__":
    sys.exit(main())
