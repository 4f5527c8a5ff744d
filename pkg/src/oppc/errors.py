"""Exception types raised by the oppc package.

Numerical-control failures (quadrature, series, root finding, time stepping)
derive from RuntimeError; bad inputs and domain violations derive from
ValueError; lookup problems derive from LookupError.  Callers that want to
distinguish "the physics broke" from "the numerics gave up" can catch
InvariantViolation separately.
"""


class QuadratureNotConverged(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class SeriesNotConverged(RuntimeError):
    """A Matsubara-type series did not stabilize under term doubling.

    Carries the partial sum and the analytic tail bound at the point the
    series gave up, when the caller had them.
    """

    def __init__(self, message, partial_sum=None, tail_bound=None):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.tail_bound = tail_bound


class RootFindingFailed(RuntimeError):
    """Characteristic-polynomial roots could not be isolated reliably."""


class VolterraUnstable(RuntimeError):
    """The Volterra time stepper produced unbounded or non-finite values."""


class TruncationTooSmall(RuntimeError):
    """The Fock-space cutoff leaks too much weight for the requested state."""


class SingularMatrix(RuntimeError):
    """A matrix that must be invertible is singular to working precision."""


class NearZeroDenominator(RuntimeError):
    """A ratio hit a near-zero denominator where no safe limit applies."""


class InvariantViolation(RuntimeError):
    """A physics invariant (trace, hermiticity, positivity, ...) failed."""


class PhaseUndefined(ValueError):
    """Spectral phase requested where the amplitude vanishes."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of the operation."""


class OutOfGrid(ValueError):
    """Time requested outside the tabulated grid."""


class ValidationError(ValueError):
    """Configuration or parameter bounds violated; message lists all."""


class ParseError(ValueError):
    """Malformed configuration document."""


class IndexOutOfRange(LookupError):
    """Propagator element index outside the computed lattice."""


class MissingElement(LookupError):
    """A propagating-function element required by the contraction is absent."""
