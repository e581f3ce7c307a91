"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid user configuration. ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class StepTooCoarse(ValueError):
    """The step count is too small for valid branch probabilities."""

    def __init__(self, message: str, n: int, min_valid_n: int | None = None):
        super().__init__(message)
        self.n = n
        self.min_valid_n = min_valid_n


class MalformedLattice(ValueError):
    """A lattice violates a structural invariant."""

    def __init__(self, message: str, node=None):
        super().__init__(message if node is None else f"node {node}: {message}")
        self.node = node


class CapacityError(RuntimeError):
    """Base class for engine size guards."""


class ExactCapExceeded(CapacityError):
    pass


class GridOverflow(CapacityError):
    pass


class EnumerationCapExceeded(CapacityError):
    pass


class InsufficientRows(ValueError):
    pass
