"""Exception hierarchy shared across the package."""


class DomainShiftError(Exception):
    """Base class for all package-specific errors."""


class TimeDomainError(DomainShiftError, ValueError):
    """A time argument lies outside the schedule horizon [0, T]."""


class SingularTimeError(DomainShiftError, ValueError):
    """An operation was requested at or beyond the pivot, where the
    fully-shifted mean coefficient vanishes and lambda diverges."""


class ScheduleConsistencyError(DomainShiftError, RuntimeError):
    """The diffusion-coefficient radicand is negative beyond the
    floating-point guard, signalling an inconsistent schedule."""


class GridError(DomainShiftError, ValueError):
    """A time grid is degenerate or its arguments are invalid."""


class QuadratureError(DomainShiftError, RuntimeError):
    """Adaptive quadrature failed to converge within the refinement
    budget."""


class TrainingError(DomainShiftError, RuntimeError):
    """Training diverged (non-finite loss)."""


class ConfigError(DomainShiftError, ValueError):
    """An experiment configuration is invalid or incomplete."""
