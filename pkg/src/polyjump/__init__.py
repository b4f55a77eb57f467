"""Moments, transforms and pricing for polynomial jump-diffusions."""

__version__ = "0.1.0"

from .errors import PolyJumpError, ValidationError  # noqa: E402
from .polyalg import GradedBasis, MonomialBasis, Poly  # noqa: E402
from .generator import GeneratorSpec, build_generator_matrix, carre_du_champ  # noqa: E402
from .moments import conditional_moment  # noqa: E402

__all__ = [
    "__version__",
    "PolyJumpError",
    "ValidationError",
    "Poly",
    "MonomialBasis",
    "GradedBasis",
    "GeneratorSpec",
    "build_generator_matrix",
    "carre_du_champ",
    "conditional_moment",
]
