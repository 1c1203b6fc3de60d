"""Exception hierarchy shared by all pyrgnn modules."""


class PyrgnnError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(PyrgnnError):
    """Base class for failures of an iterative or factorization routine."""


class NonConvergence(NumericalError):
    """An iterative eigen-solver ran out of iterations.

    The best available estimate is attached so callers may accept it.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class DegenerateSpectrum(NumericalError):
    pass


class FactorizationFailure(NumericalError):
    pass


class SingularReduction(NumericalError):
    """Kron reduction hit a singular block; ``component`` lists the offending dropped vertices."""

    def __init__(self, message, component=()):
        super().__init__(message)
        self.component = tuple(component)


class DimensionMismatch(PyrgnnError, ValueError):
    pass


class PoolCollapse(PyrgnnError):
    pass


class PreconditionViolated(PyrgnnError, ValueError):
    pass


class DataError(PyrgnnError):
    """Base class for malformed or inconsistent input data."""


class ParseError(DataError, ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class VertexIndexError(DataError, IndexError):
    pass


class TooFewSamples(DataError, ValueError):
    pass


class DegenerateGeometry(DataError, ValueError):
    pass
