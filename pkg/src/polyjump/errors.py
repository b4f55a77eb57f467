"""Exception types.

Everything a user can fix by editing a model document derives from
``ValidationError``; the CLI maps those to exit code 2.
"""


class PolyJumpError(Exception):
    """Base class for library errors."""


class ValidationError(PolyJumpError, ValueError):
    """Invalid input: bad coefficients, bad config, unsupported request."""

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        for k, v in self.detail.items():
            out[k] = v if isinstance(v, (int, float, str, bool, type(None))) else str(v)
        return out


class ConfigError(ValidationError):
    pass


class DegreeViolation(ValidationError):
    pass


class MomentMismatch(ValidationError):
    pass


class NegativeMoment(ValidationError):
    pass


class MissingJumpMoments(ValidationError):
    pass


class UnsupportedMarkFamily(ValidationError):
    pass


class NegativeDiffusion(ValidationError):
    pass


class ClosureViolation(ValidationError):
    pass


class ExponentialMomentFailure(ValidationError):
    pass


class IncompleteSolution(ValidationError):
    pass


class IllConditioned(ValidationError):
    pass


class QuadratureDivergence(ValidationError):
    pass


class DegenerateVariance(ValidationError):
    pass


class NonpositivePsi(ValidationError):
    pass


class KernelRequired(ValidationError):
    pass


class StateExit(UserWarning):
    """Simulated paths left the declared state space."""
