"""Mixed finite elements for two-phase porous-media flow with the L-scheme."""

__version__ = "0.1.0"

from .analysis import ConvergenceTable, ErrorReport, compute_errors, compute_rates, contraction_diagnostics
from .grid import StructuredGrid, build_grid, unit_grid
from .linsolve import SaddleSystem, solve_saddle
from .model import (
    BoundaryConditions,
    CoefficientSet,
    SideBC,
    builtin_injection_3d,
    builtin_manufactured_2d,
    complementary_pressure,
)
from .stepper import (
    IterationHistory,
    LSchemeConfig,
    LSchemeSolver,
    TimeGrid,
    TwoPhaseState,
    check_tau_restriction,
    l_scheme_solve,
    run_simulation,
)

__all__ = [
    "BoundaryConditions",
    "CoefficientSet",
    "ConvergenceTable",
    "ErrorReport",
    "IterationHistory",
    "LSchemeConfig",
    "LSchemeSolver",
    "SaddleSystem",
    "SideBC",
    "StructuredGrid",
    "TimeGrid",
    "TwoPhaseState",
    "build_grid",
    "builtin_injection_3d",
    "builtin_manufactured_2d",
    "check_tau_restriction",
    "complementary_pressure",
    "compute_errors",
    "compute_rates",
    "contraction_diagnostics",
    "l_scheme_solve",
    "run_simulation",
    "solve_saddle",
    "unit_grid",
]
