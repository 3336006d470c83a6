"""Exception types shared across the package."""


class MragpError(Exception):
    """Base class for package-specific failures."""


class DegenerateSplitError(MragpError):
    """A split dimension has a single distinct value within the region."""


class EmptyRegionError(MragpError):
    """A median split would produce an empty child region."""


class StructuralError(MragpError):
    """A sparse matrix violates a structural requirement (e.g. missing diagonal)."""


class PatternMismatchError(MragpError):
    """Numeric values were supplied with a different sparsity pattern than analyzed."""


class NotPositiveDefiniteError(MragpError):
    """Factorization hit a non-positive pivot."""

    def __init__(self, message, pivot_index=None, pivot_value=None):
        super().__init__(message)
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value


class SingularBlockError(MragpError):
    """A small dense covariance block failed its Cholesky factorization."""

    def __init__(self, message, region_path=None, condition=None):
        super().__init__(message)
        self.region_path = region_path
        self.condition = condition


class CapExceededError(MragpError):
    """A dense-oracle routine was asked to exceed its size cap."""


class AllEvaluationsFailedError(MragpError):
    """Every objective evaluation returned -inf."""


class ConfigError(MragpError):
    """Bad run configuration (CLI exit code 2)."""


class DataError(MragpError):
    """Bad input data (CLI exit code 3)."""


class DegenerateWeightsWarning(UserWarning):
    """Importance weights are concentrated on very few draws."""
