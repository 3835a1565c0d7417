"""Exception hierarchy shared by all packages."""
from typing import List, Optional

import config


class TrajPilotError(Exception):
    """Base class for all errors raised by TrajPilot."""

    exit_code = config.EXIT_USAGE


class ConfigError(TrajPilotError):
    """Invalid generator, decoder or training configuration."""


class SceneParseError(TrajPilotError):
    """Scenario file could not be parsed."""

    exit_code = config.EXIT_VALIDATION


class SceneValidationError(TrajPilotError):
    """Scene violates one or more invariants."""

    exit_code = config.EXIT_VALIDATION

    def __init__(self, violations: List[str], source: Optional[str] = None):
        self.violations = list(violations)
        self.source = source
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + "; ".join(self.violations))


class CheckpointError(TrajPilotError):
    """Checkpoint unreadable or built for a different configuration."""

    exit_code = config.EXIT_VALIDATION


class NumericError(TrajPilotError):
    """Non-finite value or violated positivity constraint."""

    exit_code = config.EXIT_NUMERIC
