"""Exception hierarchy shared across the package."""


class TdmmError(Exception):
    """Base class for all package errors."""


class NonFinite(TdmmError):
    """Input contains NaN or Inf entries."""


class DimensionMismatch(TdmmError):
    """Matrix dimensions are inconsistent."""


class SpectraOverlap(TdmmError):
    """Eigenvalue sets are too close for a unique Sylvester solution."""


class UnstableMatrix(TdmmError):
    """A matrix required to be Hurwitz is not."""


class NonSymmetricInput(TdmmError):
    """A matrix required to be symmetric is not."""


class NotObservable(TdmmError):
    """The pair (L, S) fails the observability rank test."""


class PlacementFailed(TdmmError):
    """Pole placement did not reach the requested spectrum."""


class ResolventSingular(TdmmError):
    """Transfer function evaluated too close to a pole."""


class GramianMismatch(TdmmError):
    """The two Gramian trace formulas disagree beyond tolerance."""


class PointOnSpectrum(TdmmError):
    """Interpolation point coincides with a system pole."""


class RankDeficient(TdmmError):
    """Krylov basis lost column rank."""


class ClusteredPoints(TdmmError):
    """Interpolation points too clustered for a usable basis."""


class InfeasiblePoint(TdmmError):
    """Objective evaluated outside the stability domain."""


class InfeasibleStart(TdmmError):
    """Optimizer started outside the stability domain."""


class LineSearchStalled(TdmmError):
    """Backtracking reduced the step below the underflow guard."""


class Diverged(TdmmError):
    """Iteration residual grew past the divergence guard."""


class Infeasible(TdmmError):
    """SDP has no strictly feasible point."""


class NewtonStalled(TdmmError):
    """Barrier Newton iteration stopped making progress."""


class SizeLimit(TdmmError):
    """Problem exceeds the internal solver's size budget."""


class SingularM22(TdmmError):
    """Recovery requires an invertible M22 block."""


class IoFailure(TdmmError):
    """File could not be written or read."""
