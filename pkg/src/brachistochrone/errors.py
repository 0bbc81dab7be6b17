"""Exception hierarchy shared by the solver, oracles and CLI."""


class BrachistochroneError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BrachistochroneError, ValueError):
    """Array length or shape does not match the chain size."""


class IndexDomainError(BrachistochroneError, IndexError):
    """Multiplier index pair lies outside the valid family."""


class GaugeError(BrachistochroneError, ValueError):
    """Amplitudes are not compatible with the real gauge."""


class StiffnessError(BrachistochroneError, RuntimeError):
    """Integrator step size underflowed or the step budget ran out."""


class DivergenceError(BrachistochroneError, FloatingPointError):
    """Integrated state became NaN or infinite."""


class NumericalError(BrachistochroneError, RuntimeError):
    """A dense linear-algebra primitive failed or lost unitarity."""


class ConvergenceError(BrachistochroneError, RuntimeError):
    """An iterative solve did not reach its tolerance.

    ``best`` carries the best iterate found, so callers can still persist it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RankError(BrachistochroneError, ArithmeticError):
    """Jacobian or design matrix is numerically rank deficient."""


class AdjointError(BrachistochroneError, RuntimeError):
    """Adjoint gradient disagrees with finite differences."""


class PreconditionError(BrachistochroneError, ValueError):
    """Input violates an operation's precondition."""


class BasisClosureError(BrachistochroneError, RuntimeError):
    """Commutator has weight outside the even multiplier family."""


class SchemaError(BrachistochroneError, ValueError):
    """Serialized document is missing a field or has the wrong type."""


class ChecksumError(SchemaError):
    """Stored checksum does not match the entry content."""
