"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, CapacityError -> 3,
EstimationError -> 4.
"""


class BranchselError(Exception):
    """Base class for package errors."""


class ConfigError(BranchselError):
    """Invalid configuration value, unknown key, or domain error in a parameter."""


class CapacityError(BranchselError):
    """Population cap breached; carries the simulation time of the breach."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class EstimationError(BranchselError):
    """Not enough data to form the requested estimate."""


class ConsistencyError(BranchselError):
    """Internal invariant violated (e.g. misaligned lineage arrays)."""
