"""Exception hierarchy shared across the package."""


class HashcfError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(HashcfError, ValueError):
    """An argument is outside its documented domain."""


class NumericError(HashcfError, ArithmeticError):
    """An iterative factorization failed to converge.

    Carries ``iterations``, the count reached before giving up.
    """

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class SingularityError(HashcfError, ArithmeticError):
    """A linear system is singular beyond the guard threshold."""


class DataFormatError(HashcfError, ValueError):
    """A raw input file does not parse.

    Carries ``path`` and 1-based ``line`` of the offending record when known.
    """

    def __init__(self, message, path=None, line=None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class ReferentialError(DataFormatError):
    """A rating references an unknown user or item id."""


class DivergenceError(HashcfError, ArithmeticError):
    """Training produced a non-finite quantity.

    Carries ``step``, the name of the update that broke.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(HashcfError, ValueError):
    """A run configuration fails validation."""
