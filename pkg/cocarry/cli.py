"""
Command-line interface

    python -m cocarry run --config fixtures/table.yaml --out runs/table
    python -m cocarry optimize --config fixtures/box.yaml --seed 3
    python -m cocarry run --batch fixtures --out runs/batch

Stage subcommands (ik, optimize, posegen, plan, simulate) reuse matching
upstream stage files from --out and print their stage report as JSON.
Exit codes: 0 success, 1 stage error, 2 configuration or usage error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .analytics import CoCarryAnalytics
from .config import current_settings
from .exceptions import CoCarryError, ConfigError, StageError
from .pipeline import STAGES, Pipeline, run_batch
from .scenario import load_scenario
from .startup import configure_logging, run_server
from .utils import export_to_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2

STAGE_HELP = {
    "ik": "ingest frames and solve inverse kinematics",
    "optimize": "optimize the bimanual posture",
    "posegen": "generate object and robot end-effector targets",
    "plan": "plan the dual-arm minimum-jerk trajectory",
    "simulate": "simulate closed-loop co-carrying under the impedance controller",
}


class HelpfulParser(argparse.ArgumentParser):
    """Prints the full help of the failing (sub)command on usage errors"""

    def error(self, message: str):
        self.print_help(sys.stderr)
        self.exit(EXIT_CONFIG, f"\n{self.prog}: error: {message}\n")


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario YAML file")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=_seed, help="override the scenario seed")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    parser = HelpfulParser(prog="cocarry", description="Ergonomic human-robot co-carrying toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=HelpfulParser)
    sub.required = True

    for name in STAGES:
        sub.add_parser(name, parents=[common], help=STAGE_HELP[name])

    run = sub.add_parser("run", parents=[common], help="run the full pipeline")
    run.add_argument("--batch", type=Path, help="run every scenario file in a directory")
    run.add_argument("--workers", type=int, help="concurrent scenarios in batch mode")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return parser


def _run_batch(args: argparse.Namespace) -> int:
    out = args.out or Path(current_settings.output_directory) / "batch"
    results = run_batch(args.batch, out, seed=args.seed, workers=args.workers)
    analytics = CoCarryAnalytics()
    summary = analytics.summarize_batch(results)
    analytics.write_summary(summary, out)
    print(export_to_json(summary["overall"]))
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_STAGE


def _run_scenario(args: argparse.Namespace) -> int:
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    scenario = load_scenario(args.config)

    if args.command == "run":
        pipeline = Pipeline(scenario, args.out, args.seed)
        report = pipeline.run()
        print(export_to_json(report.model_dump(mode="json", exclude={"created_at"})))
        return EXIT_OK

    pipeline = Pipeline(scenario, args.out, args.seed, reuse=True)
    result = pipeline.stage(args.command)
    print(export_to_json(result.model_dump(mode="json")))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(current_settings, level="DEBUG" if args.verbose else None)

    if args.command == "serve":
        run_server(args.host, args.port)
        return EXIT_OK

    try:
        if args.command == "run" and args.batch is not None:
            return _run_batch(args)
        return _run_scenario(args)
    except StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_STAGE
        print(f"error: stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except CoCarryError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
