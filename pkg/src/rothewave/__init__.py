"""Variable-step implicit time stepping for second-order evolution
inclusions with a nonsmooth velocity feedback law.

The model problem is the damped wave inclusion

    u'' + A(t, u') + B(t, u) + gamma* M(gamma u') ∋ f,   u(0) = u0, u'(0) = v0,

where A is a p-Laplacian-type damping operator acting on the velocity,
B a second-order elastic operator, M a multivalued law given by the
generalized derivative of a (possibly nonconvex, nonsmooth) scalar
potential, and gamma either a boundary trace or a domain embedding.
Space is discretized with 1-D P1 finite elements on (0, 1); time with a
variable-step implicit scheme whose grid parameters, interpolants and
stability monitors are exposed as first-class diagnostics.
"""

from .timegrid import TimeGrid, build_grid, grid_from_steps, check_step_constraint
from .fem1d import FemSpace, FemFunction
from .operators import (
    ConstantsLedger,
    OperatorSuite,
    PotentialGraph,
    ScalarLaw,
    build_suite,
    make_potential,
    make_scalar_law,
)
from .stepper import SolverConfig, StepProblem, StepSolution, solve_step, verify_step
from .rothe import (
    Interpolant,
    Load,
    Trajectory,
    average_rhs,
    dual_load,
    energy_report,
    make_interpolants,
    run,
    velocity_gap_identity,
    volume_load,
    zero_load,
)
from .study import (
    StudyPlan,
    StudyReport,
    manufactured_case,
    run_cauchy_study,
    run_hypothesis_audit,
    run_order_study,
)

__all__ = [
    "TimeGrid",
    "build_grid",
    "grid_from_steps",
    "check_step_constraint",
    "FemSpace",
    "FemFunction",
    "ConstantsLedger",
    "OperatorSuite",
    "PotentialGraph",
    "ScalarLaw",
    "build_suite",
    "make_potential",
    "make_scalar_law",
    "SolverConfig",
    "StepProblem",
    "StepSolution",
    "solve_step",
    "verify_step",
    "Interpolant",
    "Load",
    "Trajectory",
    "average_rhs",
    "dual_load",
    "energy_report",
    "make_interpolants",
    "run",
    "velocity_gap_identity",
    "volume_load",
    "zero_load",
    "StudyPlan",
    "StudyReport",
    "manufactured_case",
    "run_cauchy_study",
    "run_hypothesis_audit",
    "run_order_study",
]
