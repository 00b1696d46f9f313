"""Exception types shared across the package."""


class ReachcertError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(ReachcertError):
    """Degenerate or inconsistent set geometry."""


class SamplingStallError(ReachcertError):
    """Rejection sampler exhausted its attempt budget."""


class FitError(ReachcertError):
    """Regression problem unsolvable even with ridge regularization."""


class VacuousBoundError(ReachcertError):
    """A concentration bound's precondition fails, so it carries no information."""


class SeedOverlapError(ReachcertError):
    """Certification samples share a seed domain with the run they certify."""


class EtaMismatchError(ReachcertError):
    """Scaling factors and estimates were computed under different sampling distributions."""


class ConfigError(ReachcertError):
    """Run configuration violates the schema."""
