"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Array shapes are incompatible; the message names the offending axis."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but too small or empty for the operation."""


class GraphError(ValueError):
    """Misuse of the backward tape, e.g. calling backward on a non-scalar."""


class SaturationError(ArithmeticError):
    """A regularizer diverged; callers may substitute a large finite penalty."""


class ParseError(ValueError):
    """A file did not match its documented format."""


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


class NumericError(RuntimeError):
    """A non-finite value appeared where the computation requires finite ones."""


class DivergenceError(RuntimeError):
    """Training produced non-finite parameters.

    ``last_good`` holds the most recent finite parameter arrays so callers
    can checkpoint them before aborting.
    """

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good
