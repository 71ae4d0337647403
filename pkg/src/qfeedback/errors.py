"""Exception and warning types shared across the package."""


class QFeedbackError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(QFeedbackError, ValueError):
    """Operands act on Hilbert spaces of different dimension."""


class InvalidState(QFeedbackError, ValueError):
    """A matrix fails the density-matrix invariants (hermiticity, trace, positivity)."""


class JumpFromDarkState(QFeedbackError):
    """A detection event was requested from a state that cannot emit."""


class PositivityViolation(QFeedbackError):
    """Evolution produced an eigenvalue below tolerance; dt too large or truncation too small."""


class DegenerateSteadyState(QFeedbackError):
    """The Liouvillian kernel is not one-dimensional."""


class TruncationWarning(UserWarning):
    """Population is leaking into the top Fock levels of a truncated mode."""


class UnstableLoop(QFeedbackError):
    """The feedback loop has a closed-loop pole in the right half plane."""


class MarginalStability(QFeedbackError):
    """The Nyquist contour passes too close to the critical point to classify."""


class DegenerateSplit(QFeedbackError):
    """No light reaches the in-loop detector (eta2 = 0) but feedback is requested."""


class TooShort(QFeedbackError, ValueError):
    """Time series too short for the requested spectral estimate."""


class DivergenceDetected(QFeedbackError):
    """Time-domain simulation diverged (misclassified stability)."""


class SemiclassicalInexpressible(QFeedbackError, ValueError):
    """Sub-shot-noise input cannot be represented by classical noise plus shot noise."""


class ComplexRoot(QFeedbackError):
    """Closed-form square root has a negative argument (out-of-domain parameters)."""


class UnstableMean(QFeedbackError):
    """Fed-back mean is not damped (k0 + lambda <= 0)."""


class DelayTooLarge(QFeedbackError, ValueError):
    """Short-delay correction requested outside its validity domain."""


class UnphysicalBath(QFeedbackError, ValueError):
    """Squeezed-bath parameters violate |M|^2 <= N(N+1)."""


class UnreachableSqueezing(QFeedbackError, ValueError):
    """Requested in-loop noise level below the detector-efficiency floor."""


class NegativePrefactor(QFeedbackError):
    """Fluorescence-spectrum prefactor is negative (out-of-domain rates)."""


class EmptyDelayBuffer(QFeedbackError):
    """Delayed feedback requested before the delay buffer was created."""


class ParseError(QFeedbackError, ValueError):
    """Config file could not be parsed."""


class UnknownKey(QFeedbackError, ValueError):
    """Config file contains keys not recognized by the subcommand."""
