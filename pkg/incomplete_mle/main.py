import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from incomplete_mle.commands import estimate, invert_info, kstest, reproduce, simulate
from incomplete_mle.config import Settings, configure_logging
from incomplete_mle.exceptions import ConfigError, IncompleteMLEError
from incomplete_mle.models.schemas import RunConfig

logger = logging.getLogger("incomplete_mle")

COMMANDS = {module.command.name: module.command for module in (simulate, estimate, invert_info, reproduce, kstest)}


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    parent.add_argument("--config", help="JSON run file; flags override its values")
    parent.add_argument("--model", help="parameter file of the true model")
    parent.add_argument("--stats", help="sufficient-statistics CSV")
    parent.add_argument("--params", help="parameter file at which to evaluate information matrices")
    parent.add_argument("--input", help="CSV of standardized errors for kstest")
    parent.add_argument("--regimes", type=int, help="number of regimes M to fit")
    parent.add_argument("--seed", type=int)
    parent.add_argument("--n-paths", dest="n_paths", type=int)
    parent.add_argument("--horizon", type=float)
    parent.add_argument("--replicates", type=int)
    parent.add_argument("--method", choices=["em", "em-gradient", "fisher-scoring"])
    parent.add_argument("--tol", type=float)
    parent.add_argument("--max-iter", dest="max_iter", type=int)
    parent.add_argument("--psi-tol", dest="psi_tol", type=float)
    parent.add_argument("--psi-iters", dest="psi_iters", type=int)
    parent.add_argument("--m-estimate-kind", dest="m_estimate_kind", choices=["one_step", "em_step"])
    parent.add_argument("--threads", type=int)
    parent.add_argument("--out", help="output directory")
    parent.add_argument("--log-level", dest="log_level")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="incomplete-mle",
        description="Maximum likelihood from incomplete data for regime-switching Markov jump processes",
        parents=[common],
    )
    subparsers = parser.add_subparsers(dest="command")
    for name, command in COMMANDS.items():
        subparsers.add_parser(name, help=command.help, parents=[common], argument_default=argparse.SUPPRESS)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    config_file = getattr(args, "config", None)
    if config_file:
        try:
            values = json.loads(Path(config_file).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"run file {config_file} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run file {config_file} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"run file {config_file} must hold a JSON object")
    flags = {key: value for key, value in vars(args).items() if key not in ("config", "log_level") and value is not None}
    values.update(flags)
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(f"invalid run configuration: {exc}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
    except ValidationError as exc:
        configure_logging()
        logger.error("invalid environment settings: %s", exc)
        return 1
    configure_logging(getattr(args, "log_level", None) or settings.log_level)

    try:
        config = load_run_config(args)
        if config.command is None:
            raise ConfigError(f"no command given; choose one of {', '.join(COMMANDS)}")
        command = COMMANDS[config.command]
        command.check(config)
        logger.info("running %s", command.name)
        status = command.run(config, settings)
    except (IncompleteMLEError, ValueError, OSError) as exc:
        logger.exception("%s failed: %s", getattr(args, "command", None) or "run", exc)
        return 1
    logger.info("%s finished with status %d", command.name, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
