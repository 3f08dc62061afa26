"""Exception types raised by the integrators and analysis routines."""

import numpy as np


class ContractError(Exception):
    """Base class for all errors raised by this package."""


class EvaluationError(ContractError):
    """A vector field or map returned non-finite values."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)


class ConvergenceError(ContractError):
    """The stage equations of an implicit method could not be solved."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularStageError(ContractError):
    """The linear system for the stage Jacobians is singular."""

    def __init__(self, message, h=None):
        super().__init__(message)
        self.h = h


class PoleError(ContractError):
    """The stability function has a pole at the requested point."""

    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z


class IndefiniteError(ContractError):
    """The divergence changes sign where contraction was required."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = None if state is None else np.array(state, dtype=float)
        self.trace = trace


class ClosureError(ContractError):
    """The divergence-free splitting failed its closure check."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
