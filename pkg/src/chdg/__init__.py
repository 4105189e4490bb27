"""Interior-penalty DG solver for the Cahn-Hilliard system with degenerate
mobility, with a bound-preserving scaling limiter."""

from .basis import make_basis, make_face_quadrature, make_quadrature
from .fields import (CoupledState, DiscreteField, cell_average,
                     constant_field, mass, project_l2, project_p0,
                     zero_field)
from .forms import (MobilityCoefficients, SchemeParams, auto_penalty,
                    harmonic_average, mobility, mobility_coefficients,
                    potential_terms, residual, jacobian)
from .limiter import LimiterConfig, limit_cell, limit_field
from .mesh import (MeshTopology, build_quad_mesh, build_tri_mesh,
                   global_mesh_width)
from .scenarios import (EocTable, ScenarioConfig, default_config,
                        run_merging, run_scenario, run_spinodal,
                        run_trig_eoc)
from .solver import (LinearSolveError, NewtonConfig, NewtonError,
                     SolverFailure, advance, linear_solve, newton_solve,
                     run)

__version__ = "0.1.0"

__all__ = [
    "CoupledState", "DiscreteField", "EocTable", "LimiterConfig",
    "LinearSolveError", "MeshTopology", "MobilityCoefficients",
    "NewtonConfig", "NewtonError", "ScenarioConfig", "SchemeParams",
    "SolverFailure", "advance", "auto_penalty", "build_quad_mesh",
    "build_tri_mesh", "cell_average", "constant_field", "default_config",
    "global_mesh_width", "harmonic_average", "jacobian", "limit_cell",
    "limit_field", "linear_solve", "make_basis", "make_face_quadrature",
    "make_quadrature", "mass", "mobility", "mobility_coefficients",
    "newton_solve", "potential_terms", "project_l2", "project_p0",
    "residual", "run", "run_merging", "run_scenario", "run_spinodal",
    "run_trig_eoc", "zero_field",
]
