import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

import pydantic

from transferability.errors import InvariantViolation, UnsupportedOperationError, ValidationError

from transfer_cli.config import deep_merge, load_config, settings
from transfer_cli.core.commands import COMMANDS
from transfer_cli.core.io import output_lock
from transfer_cli.models.schemas import ExperimentConfig

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


def _parse_deltas(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid delta list {text!r}") from exc


class TransferCLI:
    """
    Command-line front end: gen | train | attack | measure | bound | report.

    Example usage:
        cli = TransferCLI()
        exit_code = cli.run(["gen", "--seed", "0", "--out", "runs/demo"])
    """

    def __init__(self):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.parser = self._build_parser()

    @staticmethod
    def _build_parser() -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="transferability", description="Transfer measures, bounds and transferability training.")
        parser.add_argument("--config", help="YAML file merged over the packaged defaults")
        parser.add_argument("--seed", type=int, help="Master seed (required unless set in the config)")
        parser.add_argument("--out", help="Output directory")
        parser.add_argument("--delta", type=_parse_deltas, help="Comma-separated radii")
        parser.add_argument("--algo", choices=["erm", "transfer"], help="Training algorithm")
        parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
        sub = parser.add_subparsers(dest="command", required=True)
        sub.add_parser("gen", help="Generate source and target domains")
        sub.add_parser("train", help="Train a model on the source domains")
        sub.add_parser("attack", help="Attack a trained model's transferability")
        sub.add_parser("measure", help="Transfer measures between two domains")
        sub.add_parser("bound", help="Generalization slacks of the measures")
        report = sub.add_parser("report", help="Tables from earlier result files")
        report.add_argument("inputs", nargs="*", help="Result JSON files")
        return parser

    @staticmethod
    def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
        """Config fragment built from the command-line flags of ``args``."""
        overrides: Dict[str, Any] = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if args.algo is not None:
            overrides["train"] = {"algo": args.algo}
        if args.delta:
            if args.command == "attack":
                overrides["attack"] = {"deltas": args.delta}
            elif args.command == "train":
                overrides.setdefault("train", {})["delta"] = args.delta[0]
            elif args.command == "measure":
                overrides["measure"] = {"gamma_delta": args.delta[0]}
        return overrides

    def build_config(self, args: argparse.Namespace) -> ExperimentConfig:
        raw = settings if args.config is None else load_config(args.config)
        overrides = self._overrides(args)
        if args.command == "report" and args.inputs:
            # Positional inputs extend the configured list.
            configured = list((raw.get("report") or {}).get("inputs") or [])
            overrides["report"] = {"inputs": configured + list(args.inputs)}
        return ExperimentConfig.model_validate(deep_merge(raw, overrides))

    def _configure_logging(self, config: ExperimentConfig, verbose: bool) -> None:
        handlers: List[logging.Handler] = [logging.StreamHandler()]
        if config.log_file:
            handlers.append(logging.FileHandler(config.out / config.log_file))
        logging.basicConfig(
            level=logging.DEBUG if verbose else logging.INFO,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            handlers=handlers,
            force=True,
        )

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Parse ``argv``, run one subcommand and return its exit code."""
        try:
            args = self.parser.parse_args(argv)
        except SystemExit as exc:
            # argparse exits 2 on usage errors; 2 is reserved for I/O here.
            return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
        try:
            config = self.build_config(args)
            config.out.mkdir(parents=True, exist_ok=True)
            self._configure_logging(config, args.verbose)
            self.logger.info("Running %s with seed %s into %s", args.command, config.seed, config.out)
            with output_lock(config.out):
                COMMANDS[args.command](config)
        except (ValidationError, UnsupportedOperationError, pydantic.ValidationError) as exc:
            self.logger.error("Invalid input: %s", exc)
            return EXIT_INVALID
        except OSError as exc:
            self.logger.error("I/O error: %s", exc)
            return EXIT_IO
        except InvariantViolation as exc:
            self.logger.error("Internal invariant violated: %s", exc, exc_info=True)
            return EXIT_INTERNAL
        except Exception as exc:
            self.logger.error("Unexpected error: %s", exc, exc_info=True)
            return EXIT_INTERNAL
        self.logger.info("%s finished", args.command)
        return EXIT_OK


def main() -> None:
    sys.exit(TransferCLI().run())


if __name__ == "__main__":
    main()
