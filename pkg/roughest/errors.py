"""Exception hierarchy for roughest.

Degenerate statistical events (nothing above threshold, negative energies)
are not errors; they surface as flags on the estimate instead.
"""


class RoughestError(Exception):
    """Base class for every error raised by the package."""


class DomainError(RoughestError, ValueError):
    """An argument lies outside the domain of the operation."""


class SimulationInfeasibleError(RoughestError):
    """Exact simulation cannot be carried out for the requested grid."""


class ConfigError(RoughestError, ValueError):
    """Invalid estimator, experiment or runtime configuration."""


class QuadratureError(RoughestError):
    """Node doubling did not reach the requested tolerance."""


class KappaCoverageError(RoughestError, LookupError):
    """A kappa table lookup fell outside the tabulated (H, p, a) range."""


class EstimationError(RoughestError):
    """The energy ladder lacks the levels an estimator needs."""


class RateFitError(RoughestError):
    """Rate regression is undefined for the supplied results."""


class OutputError(RoughestError, OSError):
    """Writing an output file failed; the message names the path."""
