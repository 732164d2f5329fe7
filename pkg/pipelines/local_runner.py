"""
Linear Response Certifier - Local Runner

Command-line front-end for the certification pipeline.

Usage:
  python -m pipelines.local_runner response --config pipelines/config.yaml
  python -m pipelines.local_runner certify --config pipelines/stochastic.yaml --m 1024
  python -m pipelines.local_runner density --config pipelines/stochastic.yaml --out runs/noise
  python -m pipelines.local_runner export-operator --config pipelines/config.yaml --kind c1

Exit status: 0 certified within tau, 1 certified above tau,
2 certification failure, 3 configuration failure.
"""

import argparse
import sys
from pathlib import Path

# Adjust path
sys.path.insert(0, str(Path(__file__).parent.parent))

from models.operator import KINDS
from pipelines.orchestrator import export_operators, run_pipeline
from pipelines.run_config import load_config
from utils.exceptions import EXIT_OK, CertificationError, exit_code_for
from utils.logger import get_pipeline_logger, log_exception

logger = get_pipeline_logger()

# Config path
CONFIG_PATH = Path(__file__).parent / "config.yaml"


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=CONFIG_PATH, help="Path to run config")
    parser.add_argument("--m", type=int, help="Partition size")
    parser.add_argument("--tau", type=float, help="Target bound on the response error")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--samples", type=int, help="Points in the CSV outputs")
    parser.add_argument("--threads", type=int, help="Worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrcert", description="Certified linear response of expanding circle maps"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("certify", "Lasota-Yorke constants and the contraction certificate"),
                       ("density", "Certified invariant density"),
                       ("response", "Certified linear response and its error budget")):
        _common(sub.add_parser(name, help=text))
    export = sub.add_parser("export-operator", help="Write the discretized operator triplets")
    _common(export)
    export.add_argument("--kind", choices=KINDS, action="append",
                        help="Operator kind (repeatable, default c0)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"m": args.m, "tau": args.tau, "out": args.out, "samples": args.samples,
                 "threads": args.threads}

    try:
        plan = load_config(args.config, **overrides)
    except CertificationError as exc:
        # NotExpanding surfaces here too, while the declared map is certified
        log_exception(logger, exc, {"config": str(args.config)})
        return exit_code_for(exc)

    if args.command == "export-operator":
        try:
            files = export_operators(plan, tuple(args.kind or ("c0",)))
        except CertificationError as exc:
            log_exception(logger, exc, {"command": args.command})
            return exit_code_for(exc)
        for path in files.values():
            print(path)
        return EXIT_OK

    outcome = run_pipeline(plan, stage=args.command)
    for path in outcome.files.values():
        print(path)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
