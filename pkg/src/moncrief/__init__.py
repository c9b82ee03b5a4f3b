"""Numerical lab for the Monge-Ampere type equation on the Bolza surface.

The package builds the genus-2 Bolza group, a finite-difference grid on its
fundamental octagon, the TT tensors coming from holomorphic quadratic
differentials, and then solves

    Delta_rho u - u + sqrt(1 + 2 |xi|^2) = 0

by damped Newton iteration.  From u it derives the metric g, the conformal
factor lambda and the hyperbolic metric gamma, and it inverts that map.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DomainError, EllipticityError,  # noqa: E402
                     GridConstructionError, GroupConstructionError, IndefiniteMetricError,
                     LinearSolveError, MoncriefError, OutOfCollarError)
from .hyperbolic import (DiskPoint, FuchsianGroup, MobiusMap, RhoMetric,  # noqa: E402
                         build_bolza_group, enumerate_group, hyperbolic_distance,
                         reduce_to_domain)
from .grid import SurfaceGrid, SymTensor, build_grid, build_mms_patch  # noqa: E402
from .qdiff import TTField, assemble_tt, gram_matrix, verify_tt  # noqa: E402
from .solver import (MoncriefSolution, SolverOptions, check_bounds, continuation_solve,  # noqa: E402
                     linearize, newton_solve, residual, solve)
from .geometry import DerivedGeometry, derive  # noqa: E402
from .teich import properness_scan, psi, psi_inverse, round_trip  # noqa: E402
