"""Exception taxonomy for the finite-bath engine library.

Every failure mode raised on purpose derives from FBEError so callers can
catch library errors without swallowing programming mistakes.
"""


class FBEError(Exception):
    """Base class for all library errors."""


class NonHermitian(FBEError):
    """A matrix that must be Hermitian is not, beyond tolerance."""


class DimensionMismatch(FBEError):
    """Observable dimensions, slot counts, or vector lengths disagree."""


class DegenerateObservables(FBEError):
    """The set {1, X_1, ..., X_K} is linearly dependent beyond tolerance."""


class NonCommuting(FBEError):
    """A commuting-basis operation was requested for non-commuting observables."""


class DimensionCap(FBEError):
    """A dense operation would exceed the supported Hilbert dimension."""


class ScaleTooLarge(FBEError):
    """Materializing this representation would exceed the class budget."""


class RankDeficient(FBEError):
    """A thermal spectrum lost full rank (weights below the floating floor)."""


class BasisMismatch(FBEError):
    """Two states do not share the joint eigenbasis required by the operation."""


class NoConvergence(FBEError):
    """An iterative solver exhausted its iteration budget."""


class OutOfRange(FBEError):
    """A moment target lies outside the achievable range of the observables."""


class SingularG(FBEError):
    """The asymptotic Fisher density is singular; coefficients are undefined."""


class ZeroColdTemperature(FBEError):
    """The cold inverse temperature is zero or negative; bounds are undefined."""


class HullViolation(FBEError):
    """Requested heats push the final state outside the moment hull."""


class SignViolation(FBEError):
    """The solved final temperature flipped the sign of the cold slot."""


class NoClosedForm(FBEError):
    """No analytic reference exists for the requested model quantity."""


class ConfigError(FBEError):
    """A run configuration failed validation."""


class InsufficientPoints(FBEError):
    """A scaling fit was requested with too few sweep points."""
