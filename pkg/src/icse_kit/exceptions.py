"""Exception hierarchy shared across the package."""


class IcseError(Exception):
    """Base class for all icse-kit errors."""


class ShapeError(IcseError):
    """Array dimensions do not conform."""


class RankError(IcseError):
    """A matrix that must have full (row or column) rank does not."""


class LossSpecError(IcseError):
    """Invalid loss specification (e.g. a non-SPD weight matrix)."""


class InfeasibleError(IcseError):
    """The constraint system admits no feasible point."""


class NumericalError(IcseError):
    """A numerical procedure failed to converge or produced invalid values."""


class CapacityError(IcseError):
    """Problem size exceeds a hard enumeration cap."""


class DegenerateWeightsError(IcseError):
    """All pattern-weight numerators vanish; weights are undefined."""


class CovarianceError(IcseError):
    """Covariance matrix is not symmetric positive semidefinite."""


class StudyError(IcseError):
    """Too many replication failures in a Monte Carlo study."""


class ConfigError(IcseError):
    """Invalid or incomplete run configuration."""


class DataError(IcseError):
    """Input data file is missing or malformed."""
