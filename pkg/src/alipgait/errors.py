"""Exception types shared across the package."""


class AlipError(Exception):
    """Base class for all package errors."""


class InvalidStateError(AlipError, ValueError):
    """A state or input contains non-finite or out-of-range values."""


class ParameterError(AlipError, ValueError):
    """A configuration or function parameter is out of range."""


class DomainError(AlipError, ValueError):
    """Curve evaluated outside its [0, 1] phase domain."""


class GeometryError(AlipError, ValueError):
    """Pendulum geometry is infeasible.

    ``value`` carries the offending quantity (an arccos argument or a
    pendulum length) and ``candidate`` the lateral candidate being tried,
    when there is one.
    """

    def __init__(self, msg, value=None, candidate=None):
        super().__init__(msg)
        self.value = value
        self.candidate = candidate


class PropagationError(AlipError, ArithmeticError):
    """Integration produced a non-finite value at time ``t``."""

    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


class DegenerateSlopeError(AlipError, ArithmeticError):
    """Two placement candidates produced (nearly) the same outcome."""


class NoOrbitError(AlipError, RuntimeError):
    """Shooting failed to find a periodic orbit."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class TrajectoryParseError(AlipError, ValueError):
    """Malformed trajectory, scenario or config file."""

    def __init__(self, msg, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + msg)
        self.line = line
        self.path = path


class ConfigurationError(AlipError, RuntimeError):
    """A controller could not be configured for the given trajectory."""


class WireFormatError(AlipError, ValueError):
    """Datagram does not match the fixed binary layout."""
