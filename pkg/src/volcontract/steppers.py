"""One-step methods that return the exact Jacobian of the step map.

The Jacobian ``A = dx_{n+1}/dx_n`` is obtained from the variational form of
the stage equations. For a Runge-Kutta method the stage Jacobians satisfy
``A_i = I + h sum_j a_ij F(X_j) A_j``, which is solved as one block linear
system, so ``A`` carries no iteration error once the stages are converged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ContractError, ConvergenceError, EvaluationError, SingularStageError
from .systems import System, eval_field, eval_jacobian
from .tableaus import ButcherTableau, resolve_tableau


@dataclass(frozen=True)
class SolverConfig:
    """Stage solver settings.

    The residual test is ``max|G| <= tol * max(1, max|x|)``.
    """

    tol: float = 1e-12
    max_iters: int = 50


@dataclass
class StepOutcome:
    x_next: np.ndarray
    jacobian: np.ndarray
    stage_states: List[np.ndarray]
    stage_jacobians: List[np.ndarray]
    stage_field_jacobians: List[np.ndarray]
    newton_iters: int = 0
    converged: bool = True

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    @property
    def logabsdet(self) -> float:
        return float(np.linalg.slogdet(self.jacobian)[1])


def _check_step(system, x, h):
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({system.dim},)")
    return x


def euler_step(system: System, x, h: float) -> StepOutcome:
    """Explicit Euler: ``x + h f(x)`` with Jacobian ``I + h F(x)``."""
    x = _check_step(system, x, h)
    fx = eval_field(system, x)
    jac = eval_jacobian(system, x)
    eye = np.eye(system.dim)
    return StepOutcome(
        x_next=x + h * fx,
        jacobian=eye + h * jac,
        stage_states=[x],
        stage_jacobians=[eye],
        stage_field_jacobians=[jac],
    )


def _stage_values(system, stages):
    return np.array([eval_field(system, X) for X in stages])


def _stage_newton_matrix(tableau, system, stages, h):
    s, n = tableau.s, system.dim
    jacs = np.hstack([eval_jacobian(system, X) for X in stages])
    return np.eye(s * n) - h * np.kron(tableau.a, np.ones((n, n))) * np.tile(jacs, (s, 1))


def _trust_region_solve(tableau, system, x, h, solver, scale, residual):
    """Hybrid Powell solve of the stage equations (scipy ``root``), then
    Newton polishing to ``scale``.

    Returns ``(stages or None, function evaluations)``.
    """
    s, n = tableau.s, system.dim

    def fun(z):
        stages = z.reshape(s, n)
        try:
            return residual(stages, _stage_values(system, stages)).ravel()
        except EvaluationError:
            return np.full(s * n, np.inf)

    def jac(z):
        try:
            return _stage_newton_matrix(tableau, system, z.reshape(s, n), h)
        except EvaluationError:
            return np.eye(s * n)

    with np.errstate(all="ignore"):
        sol = scipy.optimize.root(fun, np.tile(x, s), jac=jac, method="hybr",
                                  options={"xtol": 1e-14, "maxfev": 100 * solver.max_iters})
    z = sol.x
    evals = int(sol.nfev)
    res = fun(z)
    for _ in range(3):
        err = float(np.max(np.abs(res)))
        if not np.isfinite(err):
            return None, evals
        if err <= scale:
            return z.reshape(s, n), evals
        try:
            z = z - np.linalg.solve(jac(z), res)
        except np.linalg.LinAlgError:
            return None, evals
        res = fun(z)
    return (z.reshape(s, n) if float(np.max(np.abs(res))) <= scale else None), evals


def _solve_stages(tableau, system, x, h, solver):
    """Return stage states, number of iterations and convergence flag."""
    s, n = tableau.s, system.dim
    a = tableau.a
    if tableau.is_explicit:
        stages = np.empty((s, n))
        values = np.empty((s, n))
        for i in range(s):
            stages[i] = x + h * (a[i, :i] @ values[:i])
            values[i] = eval_field(system, stages[i])
        return stages, 0

    scale = solver.tol * max(1.0, float(np.max(np.abs(x))))
    stages = np.tile(x, (s, 1))
    values = _stage_values(system, stages)

    def residual(stages, values):
        return stages - x - h * (a @ values)

    res = residual(stages, values)
    err = float(np.max(np.abs(res)))
    if err <= scale:
        return stages, 0

    # simplified Newton with the Jacobian frozen at the start point
    newton = np.eye(s * n) - h * np.kron(a, eval_jacobian(system, x))
    try:
        lu = scipy.linalg.lu_factor(newton, check_finite=True)
    except (ValueError, np.linalg.LinAlgError):
        lu = None
    iters = 0
    if lu is not None:
        trial = stages.copy()
        for iters in range(1, solver.max_iters + 1):
            trial = trial - scipy.linalg.lu_solve(lu, res.ravel()).reshape(s, n)
            try:
                values = _stage_values(system, trial)
            except EvaluationError:
                break
            res = residual(trial, values)
            err = float(np.max(np.abs(res)))
            if not np.isfinite(err):
                break
            if err <= scale:
                return trial, iters

    found, used = _trust_region_solve(tableau, system, x, h, solver, scale, residual)
    iters += used
    if found is not None:
        return found, iters

    # fixed-point fallback with the same budget
    stages = np.tile(x, (s, 1))
    values = _stage_values(system, stages)
    for k in range(1, solver.max_iters + 1):
        stages = x + h * (a @ values)
        try:
            values = _stage_values(system, stages)
        except EvaluationError:
            break
        res = residual(stages, values)
        err = float(np.max(np.abs(res)))
        if not np.isfinite(err):
            break
        if err <= scale:
            return stages, iters + k
    raise ConvergenceError(
        f"{tableau.name}: stage equations not solved for h={h!r} "
        f"(last residual {err:.3e})",
        residual=err,
        iterations=iters + solver.max_iters,
    )


def stage_jacobian_system(tableau, field_jacs, h):
    """Block matrix of ``A_i - h sum_j a_ij F_j A_j = I``."""
    s = tableau.s
    n = field_jacs[0].shape[0]
    big = np.eye(s * n)
    for i in range(s):
        for j in range(s):
            if tableau.a[i, j] != 0.0:
                big[i * n:(i + 1) * n, j * n:(j + 1) * n] -= h * tableau.a[i, j] * field_jacs[j]
    return big


def implicit_rk_step(
    tableau: ButcherTableau,
    system: System,
    x,
    h: float,
    solver: SolverConfig = SolverConfig(),
) -> StepOutcome:
    """One Runge-Kutta step with the exactly propagated step Jacobian.

    Works for any tableau; explicit ones skip the nonlinear solve.

    Raises
    ------
    ConvergenceError
        The stage equations did not reach ``solver.tol``.
    SingularStageError
        The stage Jacobian system is singular at this step size.
    """
    x = _check_step(system, x, h)
    s, n = tableau.s, system.dim
    stages, iters = _solve_stages(tableau, system, x, h, solver)
    values = _stage_values(system, stages)
    field_jacs = [eval_jacobian(system, X) for X in stages]

    big = stage_jacobian_system(tableau, field_jacs, h)
    rhs = np.tile(np.eye(n), (s, 1))
    try:
        stacked = np.linalg.solve(big, rhs)
    except np.linalg.LinAlgError:
        raise SingularStageError(
            f"{tableau.name}: stage Jacobian system singular at h={h!r}", h=h
        ) from None
    if not np.all(np.isfinite(stacked)):
        raise SingularStageError(
            f"{tableau.name}: stage Jacobian system singular at h={h!r}", h=h
        )
    stage_jacs = [stacked[i * n:(i + 1) * n] for i in range(s)]

    jac = np.eye(n)
    for i in range(s):
        jac += h * tableau.b[i] * field_jacs[i] @ stage_jacs[i]
    return StepOutcome(
        x_next=x + h * (tableau.b @ values),
        jacobian=jac,
        stage_states=list(stages),
        stage_jacobians=stage_jacs,
        stage_field_jacobians=field_jacs,
        newton_iters=iters,
        converged=True,
    )


def symplecticity_defect(tableau: ButcherTableau) -> np.ndarray:
    """Matrix ``b_i b_j - b_i a_ij - b_j a_ji``."""
    if tableau.is_exact:
        a, b = tableau.exact_a, tableau.exact_b
        s = tableau.s
        exact = [[b[i] * b[j] - b[i] * a[i][j] - b[j] * a[j][i] for j in range(s)] for i in range(s)]
        return np.array([[float(v) for v in row] for row in exact])
    a, b = tableau.a, tableau.b
    return np.outer(b, b) - b[:, None] * a - (b[:, None] * a).T


def is_symplectic(tableau: ButcherTableau, tol: float = 1e-14) -> bool:
    return bool(np.max(np.abs(symplecticity_defect(tableau))) <= tol)


def det_identity_check(
    tableau: ButcherTableau, outcome: StepOutcome, system: System, h: float
) -> float:
    """Residual of ``det A = 1 + h sum_i b_i det(A_i) tr F(X_i)`` in 2D.

    Only meaningful for symplectic tableaux on planar systems; anything else
    is refused.
    """
    if system.dim != 2:
        raise ContractError(f"determinant identity needs a 2D system, got dim {system.dim}")
    if not is_symplectic(tableau, tol=1e-12):
        raise ContractError(f"determinant identity is inapplicable: {tableau.name} is not symplectic")
    rhs = 1.0
    for i in range(tableau.s):
        trace = np.trace(eval_jacobian(system, outcome.stage_states[i]))
        rhs += h * tableau.b[i] * np.linalg.det(outcome.stage_jacobians[i]) * trace
    return float(abs(np.linalg.det(outcome.jacobian) - rhs))


Stepper = Callable[[np.ndarray, float], StepOutcome]


def make_stepper(method, system: System, solver: SolverConfig = SolverConfig()) -> Stepper:
    """Bind a method name (or tableau) and a system into ``step(x, h)``.

    ``"euler"`` uses the closed-form Euler step; anything else goes through
    :func:`implicit_rk_step`.
    """
    if method == "euler":
        return lambda x, h: euler_step(system, x, h)
    tableau = resolve_tableau(method)
    return lambda x, h: implicit_rk_step(tableau, system, x, h, solver)


def step_map(stepper: Stepper, h: float):
    """The map ``x -> x_{n+1}`` of a stepper, for finite differencing."""
    return lambda x: stepper(np.asarray(x, dtype=float), h).x_next
