"""Volume-contraction analysis for one-step ODE integrators.

Systems and their divergence classes, Runge-Kutta steppers with exact step
Jacobians, stability-function analysis of tableaux, contractive splittings
and trajectory-level monitoring.
"""

from .errors import (
    ClosureError,
    ContractError,
    ConvergenceError,
    EvaluationError,
    IndefiniteError,
    PoleError,
    SingularStageError,
)
from .monitor import (
    ComplianceReport,
    RunAborted,
    TrajectoryRecord,
    compliance_scan,
    fd_jacobian,
    ratio_profile,
    run,
)
from .stability import Verdict, analyze_tableau, lemma5_scan, stability_function, stability_series
from .steppers import SolverConfig, StepOutcome, euler_step, implicit_rk_step, make_stepper
from .systems import Contractivity, System, builtin, classify, divergence
from .tableaus import ButcherTableau, make_tableau, resolve_tableau

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau",
    "ClosureError",
    "ComplianceReport",
    "ContractError",
    "Contractivity",
    "ConvergenceError",
    "EvaluationError",
    "IndefiniteError",
    "PoleError",
    "RunAborted",
    "SingularStageError",
    "SolverConfig",
    "StepOutcome",
    "System",
    "TrajectoryRecord",
    "Verdict",
    "analyze_tableau",
    "builtin",
    "classify",
    "compliance_scan",
    "divergence",
    "euler_step",
    "fd_jacobian",
    "implicit_rk_step",
    "lemma5_scan",
    "make_stepper",
    "make_tableau",
    "ratio_profile",
    "resolve_tableau",
    "run",
    "stability_function",
    "stability_series",
]
