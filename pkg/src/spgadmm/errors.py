"""Exception hierarchy shared by all modules."""


class SpgadmmError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SpgadmmError, ValueError):
    """Operands have non-conforming block dimensions."""


class PSDViolationError(SpgadmmError, ValueError):
    """An operator flagged positive semidefinite is not."""


class DomainError(SpgadmmError, ValueError):
    """A point or parameter lies outside the admissible domain."""


class ConfigurationError(SpgadmmError, ValueError):
    """Solver settings are invalid for the given instance."""


class DecompositionError(SpgadmmError, ValueError):
    """A block decomposition needs an invertible diagonal part."""


class ParseError(SpgadmmError, ValueError):
    """A problem or trace file could not be parsed."""


class ValidationError(SpgadmmError, ValueError):
    """A parsed file is structurally inconsistent."""


class InsufficientDataError(SpgadmmError, ValueError):
    """Too few iterations to estimate a rate."""
