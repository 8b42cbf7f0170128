"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: parameter/usage problems exit 1,
numerical failures exit 2, I/O problems (plain OSError) exit 3.
"""


class ShapegainError(Exception):
    """Base class for all package errors."""


class ParameterError(ShapegainError, ValueError):
    """Invalid argument or configuration value."""


class DegenerateInputError(ParameterError):
    """Input is structurally valid but degenerate (e.g. all-zero constellation)."""


class CapabilityError(ParameterError):
    """Request exceeds a documented capability limit (e.g. oracle size cap)."""


class UnboundedOptimumError(ParameterError):
    """No finite optimum exists for the requested optimization."""


class FramingError(ParameterError):
    """Bit stream length incompatible with the symbol framing."""


class NumericalError(ShapegainError, ArithmeticError):
    """A computation produced non-finite values."""
