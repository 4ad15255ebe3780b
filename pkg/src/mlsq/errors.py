"""Exception types shared across the package."""


class MlsqError(Exception):
    """Base class for all package-specific errors."""


class BadDimension(MlsqError):
    """Input shapes are incompatible with the requested operation."""


class RankDeficient(MlsqError):
    """A triangular factor has a (near-)zero diagonal entry.

    Carries ``index``, the 0-based position of the offending diagonal.
    """

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"rank-deficient factor at diagonal index {index}")


class ConvergenceFailure(MlsqError):
    """The iterative SVD kernel did not converge within its budget."""


class InvalidSpec(MlsqError):
    """A problem or estimator specification violates its invariants."""


class MissingSVD(MlsqError):
    """An operation needs the cached thin SVD but the problem has none."""


class MissingContext(MlsqError):
    """A data-aware sketch was requested without its problem context."""


class LevelTooLarge(MlsqError):
    """The finest sketch size exceeds what the sampling family allows."""


class TooFewSamples(MlsqError):
    """Not enough samples for the requested statistic."""


class NonPositiveValue(MlsqError):
    """A quantity that must be positive was zero or negative."""


class AllocationInfeasible(MlsqError):
    """Pilot variance estimates are unusable for sample allocation."""


class InsufficientBaseSamples(MlsqError):
    """Recycling would consume more base samples than were generated."""
