"""Composition of piece flows with positive substeps."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..errors import ContractError
from ..steppers import SolverConfig, StepOutcome, make_stepper
from .pieces import SplittingPlan


def substeps(n_pieces: int, h: float, order: int) -> List[Tuple[int, float]]:
    """``(piece index, substep)`` sequence.

    Order 1 runs the pieces left to right with step ``h``. Order 2 is the
    palindromic Strang arrangement with the last piece taking the full step.
    """
    if order == 1:
        return [(k, h) for k in range(n_pieces)]
    if order == 2:
        if n_pieces == 1:
            return [(0, h)]
        forward = [(k, 0.5 * h) for k in range(n_pieces - 1)]
        return forward + [(n_pieces - 1, h)] + forward[::-1]
    raise ContractError(f"composition order must be 1 or 2, got {order}")


class ComposedStepper:
    """Step map of a splitting plan with a 2D-contractive method on each piece.

    Calling ``stepper(x, h)`` returns a :class:`StepOutcome` whose Jacobian
    is the product of the piece step Jacobians; ``pieces_outcomes`` holds
    the per-substep outcomes of the last call.
    """

    def __init__(self, plan: SplittingPlan, method2d="midpoint", order: int = 2,
                 solver: SolverConfig = SolverConfig()):
        self.plan = plan
        self.order = order
        self.method2d = method2d
        self.steppers = [make_stepper(method2d, p.system, solver) for p in plan.pieces]
        self.last_outcomes: List[StepOutcome] = []

    def __call__(self, x, h: float) -> StepOutcome:
        if not h > 0:
            raise ValueError(f"step size must be positive, got {h}")
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        jac = np.eye(n)
        outcomes = []
        iters = 0
        for k, dt in substeps(len(self.plan.pieces), h, self.order):
            try:
                out = self.steppers[k](x, dt)
            except ContractError as exc:
                label = self.plan.pieces[k].label
                raise type(exc)(f"piece {k} {label}: {exc}") from exc
            jac = out.jacobian @ jac
            x = out.x_next
            iters += out.newton_iters
            outcomes.append(out)
        self.last_outcomes = outcomes
        return StepOutcome(
            x_next=x,
            jacobian=jac,
            stage_states=[o.x_next for o in outcomes],
            stage_jacobians=[o.jacobian for o in outcomes],
            stage_field_jacobians=[],
            newton_iters=iters,
        )


def composed_step(plan: SplittingPlan, method2d="midpoint", h: float = 0.01, order: int = 2,
                  solver: SolverConfig = SolverConfig()) -> ComposedStepper:
    """Bind a plan into a step map ``step(x) -> StepOutcome`` of fixed ``h``.

    Use :class:`ComposedStepper` directly to vary ``h`` between calls.
    """
    stepper = ComposedStepper(plan, method2d, order, solver)
    return lambda x: stepper(x, h)
