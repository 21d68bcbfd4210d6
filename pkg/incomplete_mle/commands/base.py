from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

from incomplete_mle.config import Settings
from incomplete_mle.exceptions import ConfigError
from incomplete_mle.models.schemas import RunConfig


@dataclass
class Command:
    """A CLI subcommand; ``requires`` lists RunConfig fields that must be set."""

    name: str
    help: str
    requires: Tuple[str, ...] = ()
    run: Optional[Callable[[RunConfig, Settings], int]] = field(default=None, repr=False)

    def handler(self, function):
        self.run = function
        return function

    def check(self, config: RunConfig):
        missing = [name for name in self.requires if getattr(config, name) is None]
        if missing:
            flags = ", ".join("--" + name.replace("_", "-") for name in missing)
            raise ConfigError(f"{self.name} needs {flags}")


def output_dir(config: RunConfig, settings: Settings) -> Path:
    path = Path(config.out or settings.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def threads(config: RunConfig, settings: Settings) -> int:
    return config.threads or settings.threads
