"""Exception types raised by the solvers, steppers, and analysis passes."""


class CritmassError(Exception):
    """Base class for all package-specific failures."""


class NonConvergence(CritmassError):
    """Local error control of an ODE integration failed."""


class GridTooCoarse(CritmassError):
    """A grid cannot resolve the requested profile or violates an ordering check."""


class QuadratureFailure(CritmassError):
    """Composite quadrature error estimate exceeds the requested tolerance."""


class TailNotResolved(CritmassError):
    """The outer decade of a radial integral carries too much of its value."""


class InconsistentDerivative(CritmassError):
    """Variational and finite-difference mu-derivatives disagree."""


class DegenerateCorrection(CritmassError):
    """The mass-correction denominator d/dmu of the mass is numerically zero."""


class MassTargetUnreachable(CritmassError):
    """Root solve for an initial-data amplitude failed to bracket."""


class MonotonicityLoss(CritmassError):
    """A time step produced a decreasing partial-mass profile."""


class LinearSolveFailure(CritmassError):
    """The tridiagonal implicit solve failed or returned non-finite values."""


class NegativeDensity(CritmassError):
    """Reconstructed density is negative beyond tolerance."""


class InsufficientSamples(CritmassError):
    """A fit was requested with too few samples."""


class InsufficientSpan(CritmassError):
    """A law fit was requested over too narrow a time span."""


class GridMismatch(CritmassError):
    """Two runs that must share a grid do not."""


class NoBracket(CritmassError):
    """The modulation root solve found no sign change in its bracket."""


class MultipleRoots(CritmassError):
    """The modulation bracket scan found more than one sign change."""


class ProfileMissing(CritmassError):
    """An operator assembly was asked to run without its stationary profile."""


class AssemblyFailure(CritmassError):
    """Assembled quadratic forms violate a structural property (symmetry)."""


class EigenSolveFailure(CritmassError):
    """The generalized eigenvalue solve did not converge."""


class IndefiniteB(CritmassError):
    """The metric form is not positive definite on the constrained subspace."""


class EnvelopeViolated(CritmassError):
    """No admissible constants make the partial-mass envelope hold."""
