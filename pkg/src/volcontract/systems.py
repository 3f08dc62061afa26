"""ODE systems, their Jacobians and divergence, and a registry of test problems.

Vector fields are written with numpy broadcasting so that ``field`` accepts
either a single state of shape ``(n,)`` or a batch of shape ``(..., n)``.
Jacobians follow the same convention and return ``(..., n, n)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, EvaluationError

FD_EPS = np.finfo(float).eps ** (1.0 / 3.0)
CLASSIFY_TOL = 1e-12


@dataclass(frozen=True)
class System:
    """An autonomous ODE ``x' = f(x)`` in ``dim`` dimensions.

    Parameters
    ----------
    dim : int
        State dimension.
    field : callable
        Maps states of shape ``(..., dim)`` to velocities of the same shape.
    jacobian : callable, optional
        Maps states of shape ``(..., dim)`` to ``(..., dim, dim)``. When absent
        a central finite-difference Jacobian is used.
    name : str
    lipschitz_bound : float, optional
        Advisory bound on the operator norm of the Jacobian. Never enforced.
    params : tuple
        Parameters the system was built from, kept for reporting.
    vectorized : bool
        Whether ``field`` accepts batches of states. Finite differencing
        evaluates point by point otherwise.
    """

    dim: int
    field: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "system"
    lipschitz_bound: Optional[float] = None
    params: tuple = ()
    vectorized: bool = True

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")

    def __call__(self, x):
        return self.field(x)


def _check_state(system, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise ValueError(f"state has shape {x.shape}, expected ({system.dim},)")
    return x


def fd_field_jacobian(field, x, eps=FD_EPS, vectorized=True):
    """Central-difference Jacobian of ``field`` at the single state ``x``.

    The step for component ``i`` is ``eps * max(1, |x_i|)``.
    """
    if not eps > 0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    steps = eps * np.maximum(1.0, np.abs(x))
    offsets = np.diag(steps)
    stacked = np.concatenate([x + offsets, x - offsets])
    if vectorized:
        values = np.asarray(field(stacked), dtype=float)
    else:
        values = np.array([np.asarray(field(p), dtype=float) for p in stacked])
    if not np.all(np.isfinite(values)):
        bad = stacked[~np.all(np.isfinite(values), axis=-1)][0]
        raise EvaluationError("non-finite field value during differencing", state=bad)
    return ((values[:n] - values[n:]) / (2.0 * steps[:, None])).T


def eval_jacobian(system: System, x) -> np.ndarray:
    """Jacobian ``df(x)``, analytic when the system provides one."""
    x = _check_state(system, x)
    if system.jacobian is not None:
        jac = np.asarray(system.jacobian(x), dtype=float)
        if not np.all(np.isfinite(jac)):
            raise EvaluationError("non-finite Jacobian", state=x)
        return jac
    return fd_field_jacobian(system.field, x, vectorized=system.vectorized)


def divergence(system: System, x) -> float:
    """Trace of the Jacobian at ``x``."""
    return float(np.trace(eval_jacobian(system, x)))


def eval_field(system: System, x) -> np.ndarray:
    x = _check_state(system, x)
    value = np.asarray(system.field(x), dtype=float)
    if value.shape != (system.dim,):
        raise EvaluationError(
            f"{system.name}: field returned shape {value.shape}", state=x
        )
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"{system.name}: non-finite field value", state=x)
    return value


# -- classification ---------------------------------------------------------


class Contractivity(enum.Enum):
    WEAKLY_CONTRACTIVE = "WeaklyContractive"
    STRONGLY_CONTRACTIVE = "StronglyContractive"
    VOLUME_PRESERVING = "VolumePreserving"
    INDEFINITE = "Indefinite"


@dataclass(frozen=True)
class ContractivityClass:
    kind: Contractivity
    bound: Optional[float] = None
    evidence: tuple = dc_field(default=(), repr=False)

    def __str__(self):
        if self.kind is Contractivity.STRONGLY_CONTRACTIVE:
            return f"{self.kind.value}({self.bound:.17g})"
        return self.kind.value

    @property
    def worst_state(self):
        """Sampled state with the largest divergence."""
        if not self.evidence:
            return None
        return max(self.evidence, key=lambda item: item[1])[0]


def as_box(box, dim):
    """Normalise a region to ``(lo, hi)`` arrays of length ``dim``.

    Accepts ``(lo, hi)`` scalars, ``(lo_array, hi_array)`` or a sequence of
    per-coordinate ``(lo, hi)`` pairs.
    """
    arr = np.asarray(box, dtype=float)
    if arr.shape == (2,):
        lo, hi = np.full(dim, arr[0]), np.full(dim, arr[1])
    elif arr.shape == (2, dim) and dim != 2:
        lo, hi = arr[0], arr[1]
    elif arr.shape == (dim, 2):
        lo, hi = arr[:, 0], arr[:, 1]
    else:
        raise ValueError(f"cannot interpret region of shape {arr.shape} for dim {dim}")
    if np.any(hi < lo):
        raise ValueError("region has hi < lo")
    return lo, hi


def sample_box(box, dim, n_samples, seed=0):
    lo, hi = as_box(box, dim)
    rng = np.random.default_rng(seed)
    return lo + (hi - lo) * rng.random((n_samples, dim))


def classify_samples(states, traces, tol=CLASSIFY_TOL) -> ContractivityClass:
    traces = np.asarray(traces, dtype=float)
    evidence = tuple((np.array(s), float(t)) for s, t in zip(states, traces))
    top = float(np.max(traces))
    if np.all(np.abs(traces) <= tol):
        return ContractivityClass(Contractivity.VOLUME_PRESERVING, None, evidence)
    if top < -tol:
        return ContractivityClass(Contractivity.STRONGLY_CONTRACTIVE, top, evidence)
    if top <= tol:
        return ContractivityClass(Contractivity.WEAKLY_CONTRACTIVE, None, evidence)
    return ContractivityClass(Contractivity.INDEFINITE, None, evidence)


def classify(system: System, sample_box_, n_samples: int, seed: int = 0) -> ContractivityClass:
    """Classify a system by the sign pattern of sampled divergences."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    states = sample_box(sample_box_, system.dim, n_samples, seed)
    traces = [divergence(system, s) for s in states]
    return classify_samples(states, traces)


# -- builtin problems -------------------------------------------------------


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> System:
    def f(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            [sigma * (x2 - x1), rho * x1 - x2 - x1 * x3, x1 * x2 - beta * x3], axis=-1
        )

    def jac(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        one = np.ones_like(x1)
        zero = np.zeros_like(x1)
        rows = [
            [-sigma * one, sigma * one, zero],
            [rho - x3, -one, -x1],
            [x2, x1, -beta * one],
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    return System(3, f, jac, "lorenz", params=(sigma, rho, beta))


def pendulum(eps=0.1) -> System:
    """Damped pendulum ``x'' = -sin x - eps x'`` as a first-order system."""

    def f(x):
        q, v = x[..., 0], x[..., 1]
        return np.stack([v, -np.sin(q) - eps * v], axis=-1)

    def jac(x):
        q = x[..., 0]
        one = np.ones_like(q)
        return np.stack(
            [
                np.stack([np.zeros_like(q), one], axis=-1),
                np.stack([-np.cos(q), -eps * one], axis=-1),
            ],
            axis=-2,
        )

    return System(2, f, jac, "pendulum", params=(eps,))


def linear(matrix, name="linear") -> System:
    """``x' = B x`` for a constant square matrix ``B``."""
    mat = np.array(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("linear system needs a square matrix")
    mat.setflags(write=False)
    n = mat.shape[0]

    def f(x):
        return np.einsum("ij,...j->...i", mat, x)

    def jac(x):
        x = np.asarray(x)
        return np.broadcast_to(mat, x.shape[:-1] + (n, n)).copy()

    return System(
        n, f, jac, name, lipschitz_bound=float(np.linalg.norm(mat, 2)),
        params=tuple(mat.ravel()),
    )


def near_elliptic(eps=0.01) -> System:
    return linear([[0.0, 1.0], [-1.0, -eps]], name="near-elliptic")


def x_squared() -> System:
    """``(x^2, 0)``: divergence ``2x`` changes sign across ``x = 0``."""

    def f(x):
        return np.stack([x[..., 0] ** 2, np.zeros_like(x[..., 1])], axis=-1)

    def jac(x):
        x1 = x[..., 0]
        zero = np.zeros_like(x1)
        return np.stack(
            [np.stack([2 * x1, zero], axis=-1), np.stack([zero, zero], axis=-1)],
            axis=-2,
        )

    return System(2, f, jac, "x-squared")


_DEFAULTS = {
    "lorenz": (10.0, 28.0, 8.0 / 3.0),
    "pendulum": (0.1,),
    "near-elliptic": (0.01,),
    "rotation": (),
    "x-squared": (),
}


def builtin(name: str, params: Sequence[float] = ()) -> System:
    """Build a registered system by name.

    ``lorenz`` takes ``(sigma, rho, beta)``, ``pendulum`` and ``near-elliptic``
    take ``eps``, ``linear2d`` takes four matrix entries in row order and
    ``linear-nd`` takes ``n*n`` entries. Empty ``params`` selects defaults
    where a default exists.
    """
    params = tuple(float(p) for p in np.asarray(params, dtype=float).ravel())
    if name == "linear2d":
        if len(params) != 4:
            raise ContractError(f"linear2d takes 4 parameters, got {len(params)}")
        return linear(np.reshape(params, (2, 2)), name="linear2d")
    if name == "linear-nd":
        n = int(round(np.sqrt(len(params))))
        if n < 1 or n * n != len(params):
            raise ContractError(f"linear-nd takes n*n parameters, got {len(params)}")
        return linear(np.reshape(params, (n, n)), name="linear-nd")
    if name not in _DEFAULTS:
        raise ContractError(
            f"unknown system {name!r}; known: {', '.join(builtin_names())}"
        )
    default = _DEFAULTS[name]
    if not params:
        params = default
    if len(params) != len(default):
        raise ContractError(f"{name} takes {len(default)} parameters, got {len(params)}")
    if name == "lorenz":
        return lorenz(*params)
    if name == "pendulum":
        return pendulum(*params)
    if name == "near-elliptic":
        return near_elliptic(*params)
    if name == "rotation":
        return linear([[0.0, 1.0], [-1.0, 0.0]], name="rotation")
    return x_squared()


def builtin_names():
    return ("lorenz", "pendulum", "linear2d", "linear-nd", "near-elliptic", "rotation", "x-squared")


def jacobian_batch(system: System, states) -> np.ndarray:
    """Jacobians at a batch of states, shape ``(m, n, n)``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if system.jacobian is not None and system.vectorized:
        jac = np.asarray(system.jacobian(states), dtype=float)
        if jac.shape == states.shape + (system.dim,):
            return jac
    if system.jacobian is not None:
        return np.array([system.jacobian(s) for s in states], dtype=float)
    if not system.vectorized:
        return np.array([fd_field_jacobian(system.field, s, vectorized=False) for s in states])
    m, n = states.shape
    steps = FD_EPS * np.maximum(1.0, np.abs(states))
    out = np.empty((m, n, n))
    for k in range(n):
        shift = np.zeros_like(states)
        shift[:, k] = steps[:, k]
        diff = np.asarray(system.field(states + shift)) - np.asarray(system.field(states - shift))
        out[:, :, k] = diff / (2.0 * steps[:, k, None])
    return out


def divergence_batch(system: System, states) -> np.ndarray:
    return np.trace(jacobian_batch(system, states), axis1=-2, axis2=-1)
