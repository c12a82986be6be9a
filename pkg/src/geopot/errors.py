"""Exception hierarchy shared across the package."""


class PotentialModelError(Exception):
    """Base class for all model-specific failures."""


class AllMissing(PotentialModelError):
    """Every observation in the site set is missing."""


class NonPositiveTheta(PotentialModelError):
    """Correlation range parameter must be strictly positive."""


class AlphaNotOne(PotentialModelError):
    """Analytic interaction derivatives exist only for shape alpha = 1."""


class SingularCovariance(PotentialModelError):
    """Covariance factorization failed even at the maximum jitter level."""


class RankDeficientX(PotentialModelError):
    """Covariate matrix has linearly dependent columns on the observed rows."""


class SingularInformation(PotentialModelError):
    """Information matrix is not invertible."""


class NoUncertaintySource(PotentialModelError):
    """Neither an information matrix nor a bootstrap sample is available."""


class CovariateCoverageGap(PotentialModelError):
    """Covariate rasters do not cover the requested prediction grid."""


class EmptyFeasibleSet(PotentialModelError):
    """No grid cell is a feasible candidate for the greedy site search."""


class ParseError(PotentialModelError):
    """Malformed input file; carries a 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionMismatch(PotentialModelError):
    """Input dimensions are inconsistent with each other or with the model."""
