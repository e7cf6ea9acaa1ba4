"""Exception hierarchy.

The CLI maps these onto process exit codes: scenario/precoder file problems
exit with 2, numerical failures with 3, enumeration-guard violations with 4.
"""


class MimomacError(Exception):
    """Base class for all package-specific errors."""


class ScenarioParseError(MimomacError):
    """A scenario or precoder file could not be parsed or failed validation."""


class NumericalError(MimomacError):
    """A numerical routine failed to reach its accuracy target or diverged."""


class DomainError(NumericalError):
    """An input violated a mathematical precondition (e.g. a non-PSD covariance)."""


class CapacityError(MimomacError):
    """A constellation enumeration would exceed the exhaustive-evaluation guard."""
