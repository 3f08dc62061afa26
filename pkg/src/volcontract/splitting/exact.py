"""Splittings whose pieces are solved exactly or explicitly.

``lorenz_exact_split_step`` composes the exact flows of the linear part and
the rotation part of the Lorenz field. ``explicit_contractive_step`` splits
``f = (f - Mx) + Mx`` for a symmetric traceless ``M`` chosen so that
``df - M`` has a real spectrum, applies Euler to the first part and the
matrix exponential to the second.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from ..errors import ContractError
from ..steppers import StepOutcome
from ..systems import System, eval_field, eval_jacobian, sample_box

REAL_TOL = 1e-8
MATRIX_TOL = 1e-12


def _expm_2x2(B, h):
    """``exp(hB)`` for real 2x2 ``B`` with real eigenvalues, else ``None``."""
    tau = B[0, 0] + B[1, 1]
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    disc = tau * tau - 4.0 * det
    if disc < 0.0:
        return None
    half = 0.5 * np.sqrt(disc)
    shifted = B - 0.5 * tau * np.eye(2)
    x = h * half
    sinhc = h * (np.sinh(x) / x if x > 1e-8 else 1.0 + x * x / 6.0)
    return np.exp(0.5 * tau * h) * (np.cosh(x) * np.eye(2) + sinhc * shifted)


def lorenz_linear_part(sigma, rho, beta):
    return np.array([[-sigma, sigma, 0.0], [rho, -1.0, 0.0], [0.0, 0.0, -beta]])


def lorenz_linear_flow(params, h):
    """``exp(hL)`` for the linear part ``L`` of the Lorenz field."""
    sigma, rho, beta = params
    L = lorenz_linear_part(sigma, rho, beta)
    block = _expm_2x2(L[:2, :2], h)
    if block is None:
        return scipy.linalg.expm(h * L)
    out = np.zeros((3, 3))
    out[:2, :2] = block
    out[2, 2] = np.exp(-beta * h)
    return out


def lorenz_rotation_flow(x, h):
    """Exact flow of ``(0, -x1 x3, x1 x2)`` and its Jacobian."""
    x1, x2, x3 = x
    theta = h * x1
    c, s = np.cos(theta), np.sin(theta)
    y = np.array([x1, c * x2 - s * x3, s * x2 + c * x3])
    jac = np.array(
        [
            [1.0, 0.0, 0.0],
            [h * (-s * x2 - c * x3), c, -s],
            [h * (c * x2 - s * x3), s, c],
        ]
    )
    return y, jac


def lorenz_exact_split_step(params, x, h: float, order: int = 2) -> StepOutcome:
    """One step of the exactly solved linear + rotation splitting of Lorenz.

    ``log|det A| = -(sigma + 1 + beta) h`` for every state.
    """
    if h < 0:
        raise ValueError(f"step size must be non-negative, got {h}")
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError("Lorenz state must have length 3")
    if order == 1:
        E = lorenz_linear_flow(params, h)
        y = E @ x
        x_next, R = lorenz_rotation_flow(y, h)
        jac = R @ E
        stages = [y]
    elif order == 2:
        E = lorenz_linear_flow(params, 0.5 * h)
        y = E @ x
        z, R = lorenz_rotation_flow(y, h)
        x_next = E @ z
        jac = E @ R @ E
        stages = [y, z]
    else:
        raise ContractError(f"order must be 1 or 2, got {order}")
    return StepOutcome(x_next, jac, stages, [], [])


def lorenz_exact_stepper(params, order=2):
    return lambda x, h: lorenz_exact_split_step(params, x, h, order)


# -- explicit contractive splitting -----------------------------------------


@dataclass(frozen=True)
class SpectrumCheck:
    """Result of sampling the spectrum of ``df(x) - M``.

    ``margin`` is the smallest gap between two eigenvalues (how far the
    spectrum is from turning complex); ``axis_gap`` is the smallest
    ``|Re lambda|``. ``worst_state`` is where the check failed, or where the
    margin was smallest.
    """

    ok: bool
    margin: float
    axis_gap: float
    worst_state: Optional[np.ndarray]
    n_checked: int


def _check_M(M, n):
    M = np.asarray(M, dtype=float)
    if M.shape != (n, n):
        raise ContractError(f"M must be {n}x{n}")
    if np.max(np.abs(M - M.T)) > MATRIX_TOL:
        raise ContractError("M must be symmetric")
    if abs(np.trace(M)) > MATRIX_TOL:
        raise ContractError(f"M must be traceless, tr M = {np.trace(M)!r}")
    return M


def _real_spectrum(J):
    """Eigenvalues if real to ``REAL_TOL``; 2x2 uses the discriminant."""
    if J.shape == (2, 2):
        tau = J[0, 0] + J[1, 1]
        disc = (J[0, 0] - J[1, 1]) ** 2 + 4.0 * J[0, 1] * J[1, 0]
        if disc < -REAL_TOL * max(1.0, tau * tau):
            return None
        root = 0.5 * np.sqrt(max(disc, 0.0))
        return np.array([0.5 * tau - root, 0.5 * tau + root])
    eigs = np.linalg.eigvals(J)
    if np.max(np.abs(eigs.imag)) > REAL_TOL:
        return None
    return np.sort(eigs.real)


def validate_real_spectrum(system: System, M, region, n_samples: int = 100, seed: int = 0) -> SpectrumCheck:
    """Check that ``df(x) - M`` has real eigenvalues on sampled states."""
    M = _check_M(M, system.dim)
    states = sample_box(region, system.dim, max(int(n_samples), 1), seed)
    margin, axis_gap, worst = np.inf, np.inf, None
    for state in states:
        eigs = _real_spectrum(eval_jacobian(system, state) - M)
        if eigs is None:
            return SpectrumCheck(False, -np.inf, float("nan"), state, len(states))
        gap = float(np.min(np.diff(eigs))) if len(eigs) > 1 else np.inf
        if gap < margin:
            margin, worst = gap, state
        axis_gap = min(axis_gap, float(np.min(np.abs(eigs))))
    return SpectrumCheck(True, margin, axis_gap, worst, len(states))


def search_traceless_M(system: System, region, n_samples: int = 100, scales=None, seed: int = 0):
    """Scale a fixed diagonal traceless pattern until the spectrum check passes.

    Returns ``(M, check)``; raises if no scale in ``scales`` works.
    """
    n = system.dim
    pattern = np.linspace(1.0, -1.0, n)
    if scales is None:
        scales = np.geomspace(1e-2, 1e3, 61)
    for scale in scales:
        M = np.diag(scale * pattern)
        check = validate_real_spectrum(system, M, region, n_samples, seed)
        if check.ok and check.margin > 0:
            return M, check
    raise ContractError("no diagonal traceless M found that makes df - M real")


def _sym_expm(M, h):
    w, V = np.linalg.eigh(M)
    return (V * np.exp(h * w)) @ V.T


def explicit_contractive_step(system: System, M, x, h: float, validation: Optional[SpectrumCheck]) -> StepOutcome:
    """Euler on ``f - Mx`` followed by the exact flow ``exp(hM)``.

    ``validation`` must be a passing :class:`SpectrumCheck` for ``M``.
    """
    M = _check_M(M, system.dim)
    if validation is None:
        raise ContractError("run validate_real_spectrum before explicit_contractive_step")
    if not validation.ok:
        raise ContractError("spectrum validation failed for this M")
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    y = x + h * (eval_field(system, x) - M @ x)
    euler_jac = np.eye(system.dim) + h * (eval_jacobian(system, x) - M)
    E = _sym_expm(M, h)
    return StepOutcome(E @ y, E @ euler_jac, [y], [euler_jac], [])


def explicit_stepper(system: System, M, validation: SpectrumCheck):
    return lambda x, h: explicit_contractive_step(system, M, x, h, validation)
