"""Exception hierarchy.

The CLI maps these onto process exit codes: configuration and usage problems
exit 2, numerical failures exit 3, statistical check failures exit 1.
"""


class CsbpqError(Exception):
    """Base class for all library errors."""


class ConfigError(CsbpqError):
    """Invalid configuration input (bad JSON, unknown keys, bad CLI usage)."""


class DomainError(CsbpqError):
    """Arguments outside a function's mathematical domain."""


class UnsupportedMechanismError(DomainError):
    """Mechanism is valid but outside the operation's supported class
    (e.g. supercritical input to the Laplace solver)."""


class NumericalError(CsbpqError):
    """Solver or simulation failure: NaN state, nonconvergent limit,
    integration breakdown."""


class ResourceLimitError(NumericalError):
    """A per-path event budget was exceeded."""


class StatisticalError(CsbpqError):
    """A verification suite check fell outside its acceptance band."""
