import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from configs.gen_run_cfs import (EXPERIMENT_NAMES, ConfigError, ConfigGenerator, RunConfig, parse_config,
                                 resolve_output_dir)
from experiments.experiment_batch import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, RunProcessor
from experiments.experiments import HypothesisUnmetError
from integrator.integrator import SimulationBlowUpError
from ledger.ledger import Ledger, LedgerError

logger = logging.getLogger("stable_lattice")

DEFAULT_CONFIG_DIR = "configs/database"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: configs/database/<name>.json)")
    common.add_argument("--out", help="output directory (else config output.directory, "
                                      "else $STABLE_LATTICE_OUT, else results/)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    common.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    parser = argparse.ArgumentParser(
        prog="stable-lattice",
        description="Simulate and verify alpha-stable driven interacting lattice systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="draw stable increments and check their law")
    sub.add_parser("simulate", parents=[common], help="simulate one trajectory")
    sub.add_parser("verify-kernel-bound", parents=[common], help="check powers of (c delta + a) against the bound")
    sub.add_parser("validate", parents=[common], help="check the model against the standing assumptions")
    experiment = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo experiment")
    experiment.add_argument("name", choices=EXPERIMENT_NAMES)
    ledger = sub.add_parser("verify-ledger", help="check the hash chain of an output directory's ledger")
    ledger.add_argument("--out", help="output directory holding ledger.json")
    generate = sub.add_parser("generate-configs", help="write a default configuration for every run")
    generate.add_argument("--dir", default=DEFAULT_CONFIG_DIR)
    return parser


def configure_logging(quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def load_config(args: argparse.Namespace, name: str) -> RunConfig:
    """Read the config, force the run name to the subcommand and apply the seed override."""
    path = Path(args.config) if args.config else Path(DEFAULT_CONFIG_DIR) / f"{name}.json"
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    # the validate subcommand reports assumption failures instead of refusing them
    config = parse_config(text, validate=False)
    document = config.model_dump(mode="json")
    if document["experiment"]["name"] != name:
        logger.info("Configuration names %r, running %r", document["experiment"]["name"], name)
        document["experiment"]["name"] = name
        document["experiment"]["params"] = {}
    if args.seed is not None:
        document["noise"]["seed"] = args.seed
    return parse_config(RunConfig.model_validate(document).to_json(), validate=name != "validate")


def run(args: argparse.Namespace) -> int:
    name = args.name if args.command == "experiment" else args.command
    try:
        config = load_config(args, name)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_ERROR

    out_dir = resolve_output_dir(args.out, config)
    try:
        result = RunProcessor(config, out_dir, workers=args.threads, progress=not args.quiet).process()
    except HypothesisUnmetError as e:
        print(f"Hypothesis unmet: {e}", file=sys.stderr)
        return EXIT_ERROR
    except SimulationBlowUpError as e:
        print(f"Simulation blew up: {e}; last finite state in {out_dir / 'blowup.json'}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, RuntimeError, OSError) as e:
        logger.exception("Run %s failed", name)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR

    print(result.summary)
    print(f"\nOutputs written to {out_dir}:")
    for filename, digest in sorted(result.outputs.items()):
        print(f"  {filename}  sha256 {digest[:16]}")
    print(f"Ledger block: {result.ledger_block}")
    print(f"Completed in {result.processing_time:.2f} seconds")
    return result.status


def verify_ledger(args: argparse.Namespace) -> int:
    path = resolve_output_dir(args.out, None) / "ledger.json"
    if not path.exists():
        print(f"No ledger at {path}", file=sys.stderr)
        return EXIT_ERROR
    try:
        ledger = Ledger(str(path))
    except LedgerError as e:
        print(str(e), file=sys.stderr)
        return EXIT_ERROR
    is_valid, bad_block = ledger.verify_chain()
    print(f"Ledger {path}: {len(ledger.blocks)} blocks, valid: {is_valid}")
    if not is_valid:
        print(f"First bad block: {bad_block}")
        return EXIT_FAIL
    return EXIT_PASS


def generate_configs(args: argparse.Namespace) -> int:
    try:
        paths = ConfigGenerator(args.dir).generate_default_configs()
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_ERROR
    for path in paths:
        print(f"Wrote {path}")
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "quiet", False))
    if args.command == "verify-ledger":
        return verify_ledger(args)
    if args.command == "generate-configs":
        return generate_configs(args)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
