# Heart of the application: the command-line runner for transport-propagator scenarios.
#
#   python app.py simulate --config data/scenarios/rotation_m2.ini --output out.csv
#   python app.py verify --config data/scenarios/three_block_m6.ini
#   python app.py estimate-constants --config ...
#   python app.py compare-propagators --config ...
#
# Exit codes: 0 success, 1 failed verification, 2 configuration error, 3 solver failure,
# 4 I/O failure, 5 violated Hypothesis certificate.
import argparse
import logging
import sys
from typing import List, Optional

from algebra.errors import ConfigurationError, NumericalError, RejectedInputError
from pipeline.comparer import PropagatorComparer
from pipeline.constants import ConstantEstimator
from pipeline.output_writer import OutputWriter
from pipeline.scenario import ScenarioLoader, dump_scenario
from pipeline.simulator import Simulator
from pipeline.suite_runner import SuiteRunner
from utils.settings import get_settings

logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4
EXIT_CERTIFICATE = 5

COMMANDS = ("simulate", "verify", "estimate-constants", "compare-propagators")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (INI)")
    common.add_argument("--output", help="CSV file for the results")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--list", action="store_true", help="print the verification check names and exit")
    common.add_argument("--dump-config", action="store_true", help="print the fully resolved scenario and exit")
    common.add_argument("--verbose", action="store_true", help="debug logging on standard error")

    parser = argparse.ArgumentParser(prog="app.py", description="Transport propagators of pinching-expectation paths")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common])
    return parser


def _print_reports(reports) -> None:
    for report in reports:
        print(report.line())


def _simulate(loaded, args) -> int:
    if not args.output:
        print("error: simulate needs --output", file=sys.stderr)
        return EXIT_CONFIG
    simulated = Simulator().run(loaded)
    OutputWriter().run({"output": args.output, "df": simulated["df"]})
    print(f"wrote {simulated['rows']} rows to {args.output}")
    return EXIT_OK


def _verify(loaded, args) -> int:
    result = SuiteRunner().run(loaded)
    _print_reports(result["reports"])
    if args.output:
        OutputWriter().run({"output": args.output, "reports": result["reports"]})
    return EXIT_OK if result["passed"] else EXIT_CHECKS_FAILED


def _estimate_constants(loaded, args) -> int:
    result = ConstantEstimator().run(loaded)
    for line in ConstantEstimator.lines(result["constants"]):
        print(line)
    if not result["certified"]:
        print("error: empirical C_J exceeds the bound 4|J|D_J^2", file=sys.stderr)
        return EXIT_CERTIFICATE
    return EXIT_OK


def _compare_propagators(loaded, args) -> int:
    result = PropagatorComparer().run(loaded)
    _print_reports(result["reports"])
    if args.output:
        OutputWriter().run({"output": args.output, "reports": result["reports"]})
    return EXIT_OK if result["passed"] else EXIT_CHECKS_FAILED


HANDLERS = {
    "simulate": _simulate,
    "verify": _verify,
    "estimate-constants": _estimate_constants,
    "compare-propagators": _compare_propagators,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        settings = get_settings()
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if args.list:
        print("\n".join(SuiteRunner().run({"list_only": True})["names"]))
        return EXIT_OK
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG

    try:
        loaded = ScenarioLoader().run({
            "config": args.config,
            "seed": args.seed,
            "settings": settings,
            "build": not args.dump_config,
        })
    except (ConfigurationError, RejectedInputError) as exc:
        print(f"error: invalid scenario {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.dump_config:
        sys.stdout.write(dump_scenario(loaded["scenario"]))
        return EXIT_OK

    try:
        return HANDLERS[args.command](loaded, args)
    except (ConfigurationError, RejectedInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.debug("numerical failure context: %s", exc.context)
        print(f"error: solver failure: {exc} (residual {exc.residual:.3g})", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
