"""Numerical laboratory for self-shrinkers of mean curvature flow.

Rotationally symmetric shrinker profiles, the Gaussian-weighted stability
operator, rescaled graphical flows over a shrinker, spectral mode audits,
the fixed-point construction of ancient flows, Gaussian densities and the
localized avoidance distance.
"""

from .errors import NumericalError, SearchFailure, ShrinkerLabError, ValidationError
from .report import AuditReport

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "NumericalError",
    "SearchFailure",
    "ShrinkerLabError",
    "ValidationError",
    "__version__",
]
