"""Exception types shared across the package."""


class OsfslError(Exception):
    """Base class for all package-specific errors."""


class DomainError(OsfslError):
    """An argument is outside the mathematical domain of an operation."""


class DegenerateVectorError(DomainError):
    """A vector norm fell below the floor where cosine similarity is meaningful."""


class FeatureTableError(OsfslError):
    """A feature table file or in-memory feature set violates its invariants."""


class SamplingError(OsfslError):
    """The pool cannot satisfy an episode specification."""


class ParameterError(OsfslError):
    """A hyperparameter is outside its allowed range."""


class OptimizationError(OsfslError):
    """Transductive optimization produced a non-finite loss or gradient."""


class OracleError(OsfslError):
    """The finite-difference oracle could not evaluate the objective."""


class ConfigError(OsfslError):
    """A run configuration (CLI flags or config file) is invalid."""
