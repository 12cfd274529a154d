"""Exception types shared across the package."""


class BickdError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(BickdError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(BickdError, ValueError):
    """A scalar hyperparameter is outside its valid range."""


class DegenerateInputError(BickdError, ValueError):
    """Input has zero norm (or similar) and the quantity is undefined."""
