"""Exception types shared across the package."""

from __future__ import annotations


class ArithmeticOverflowError(ArithmeticError):
    """A fixed-width integer result did not fit its register."""


class PipelineStateError(RuntimeError):
    """An operation was invoked in a state that does not allow it."""


class BudgetViolation(RuntimeError):
    """A per-packet pass used more primitive operations than allowed."""

    def __init__(self, used: int, limit: int):
        super().__init__(f"per-packet op budget exceeded: used {used} > limit {limit}")
        self.used = used
        self.limit = limit


class ReportFormatError(ValueError):
    """Report bytes do not start with the expected magic."""


class ReportLengthError(ValueError):
    """Report bytes are shorter or longer than the header announces."""


class ReportVersionError(ValueError):
    """Report carries a version this parser does not understand."""


class TraceParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceOrderError(ValueError):
    """Timestamps went backwards."""


class CompileError(ValueError):
    """A decision tree cannot be lowered to a table program."""


class InvariantViolation(RuntimeError):
    """An internal guarantee failed; never silently defaulted."""


class ConfigError(ValueError):
    """Experiment configuration is invalid."""
