from dataclasses import dataclass
from typing import Optional


@dataclass
class CoopError(Exception):
    """Base class for errors that should be reported to the user with a machine-readable code."""
    code: str
    description: str

    def __str__(self):
        return self.description


class UndefinedRatio(CoopError):
    """The service ratio M was requested for a profile that has no own demand."""
    def __init__(self, description: str = "service ratio is undefined when s_xn is 0"):
        super().__init__("undefined_ratio", description)


class ScenarioError(CoopError):
    """A scenario file could not be parsed or validated. ``line`` is 1-based, or ``None`` for missing keys."""
    line: Optional[int]

    def __init__(self, line: Optional[int], description: str):
        super().__init__("invalid_scenario", description)
        self.line = line

    def __str__(self):
        if self.line is None:
            return f"scenario: {self.description}"
        return f"scenario line {self.line}: {self.description}"


class ExecutionError(CoopError):
    """A parsed scenario failed while running or writing its output."""
    def __init__(self, description: str):
        super().__init__("execution_failed", description)
