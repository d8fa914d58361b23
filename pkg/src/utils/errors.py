"""Exception types shared by the solver, the measurements and the CLI.

The CLI maps these onto exit codes: ConfigError -> 2, FeasibilityError -> 3,
InvariantViolation -> 4.
"""


class ConfigError(ValueError):
    """Run configuration is missing a field or holds an invalid value."""

    def __init__(self, field, message=None, line=None):
        self.field = field
        self.line = line
        text = message if message is not None else f"{field} required"
        if line is not None:
            text = f"{text} (line {line})"
        super().__init__(text)


class FeasibilityError(RuntimeError):
    """Requested dense computation exceeds the configured size guard."""


class InvariantViolation(RuntimeError):
    """An exact invariant of the scheme failed at runtime."""


class CollapseError(ValueError):
    """Conditional slice has zero norm, so no post-detection state exists."""
