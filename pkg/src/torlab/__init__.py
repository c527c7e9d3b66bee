"""Numerical laboratory for k-torsional rigidity, dual torsional measures and
the normalized curvature flow of the associated dual Minkowski problem."""

from .body import Body, RadialField, SupportField, body_from_radial, body_from_support
from .errors import (ConfigurationError, RangeError, SolverError, StiffnessError, TorlabError,
                     ValidationError)
from .shapes import make_body
from .sphere import SphereGrid, build_grid
from .torsion import TorsionSolution, solve_khessian

__version__ = "0.1.0"
