"""Contraction accounting along trajectories and step-size compliance scans."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, EvaluationError
from .steppers import SolverConfig, StepOutcome, make_stepper
from .systems import FD_EPS, System, divergence, fd_field_jacobian, linear

VIOLATION_TOL = 1e-10
RATIO_FLOOR = 1e-14

# 3-point Gauss-Legendre on [0, 1]
_GL3_NODES = 0.5 + 0.5 * np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GL3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass
class TrajectoryRecord:
    """Per-step contraction bookkeeping of one run.

    ``states[k]`` is the state at ``times[k]``; the per-step arrays have one
    entry per step and refer to the step ending at ``times[k + 1]``.
    """

    times: np.ndarray
    states: np.ndarray
    step_logdet: np.ndarray
    cum_logdet: np.ndarray
    div_integral: np.ndarray
    ratio: np.ndarray
    step_det: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.step_logdet)

    @property
    def violations(self) -> int:
        return int(np.sum(np.abs(self.step_det) > 1.0 + VIOLATION_TOL))

    def to_csv(self, stream=None) -> str:
        """CSV with header ``t, x1..xn, step_logdet, cum_logdet, div_integral, ratio``.

        Row 0 is the initial state with the per-step columns at zero; ratio is
        empty where undefined. Numbers use 17 significant digits.
        """
        return trajectory_csv(self, stream)


def trajectory_csv(record: TrajectoryRecord, stream=None) -> str:
    n = record.states.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [
        "step_logdet",
        "cum_logdet",
        "div_integral",
        "ratio",
    ]
    out = stream if stream is not None else io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)

    def fmt(v):
        return "" if not np.isfinite(v) else f"{float(v):.17g}"

    for k in range(len(record.times)):
        if k == 0:
            tail = [0.0, 0.0, 0.0, float("nan")]
        else:
            j = k - 1
            tail = [record.step_logdet[j], record.cum_logdet[j], record.div_integral[j], record.ratio[j]]
        writer.writerow([fmt(record.times[k])] + [fmt(v) for v in record.states[k]] + [fmt(v) for v in tail])
    return out.getvalue() if stream is None else ""


class RunAborted(ContractError):
    """A stepper failed mid-run; ``record`` holds the steps completed so far."""

    def __init__(self, message, record, cause):
        super().__init__(message)
        self.record = record
        self.cause = cause


def _build_record(times, states, dets, divs, ratios):
    dets = np.asarray(dets, dtype=float)
    with np.errstate(divide="ignore"):
        logdet = np.log(np.abs(dets)) if dets.size else np.zeros(0)
    return TrajectoryRecord(
        times=np.asarray(times),
        states=np.asarray(states),
        step_logdet=logdet,
        cum_logdet=np.cumsum(logdet),
        div_integral=np.asarray(divs, dtype=float),
        ratio=np.asarray(ratios, dtype=float),
        step_det=dets,
    )


def step_divergence_integral(system: System, x0, x1, h: float) -> float:
    """``int tr F dt`` over one step along the chord from ``x0`` to ``x1``."""
    total = 0.0
    for node, weight in zip(_GL3_NODES, _GL3_WEIGHTS):
        total += weight * divergence(system, (1.0 - node) * x0 + node * x1)
    return h * total


def run(stepper: Callable[[np.ndarray, float], StepOutcome], x0, h: float, n_steps: int,
        system: Optional[System] = None) -> TrajectoryRecord:
    """Iterate ``stepper`` and account ``log|det A|`` per step.

    ``system`` supplies the divergence for the reference integral and the
    ratio column; without it those columns are NaN.

    Raises :class:`RunAborted` carrying the partial record if a step fails.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    x = np.asarray(x0, dtype=float)
    times, states = [0.0], [x.copy()]
    dets, divs, ratios = [], [], []
    for k in range(n_steps):
        try:
            out = stepper(x, h)
        except ContractError as exc:
            partial = _build_record(times, states, dets, divs, ratios)
            raise RunAborted(f"step {k} failed: {exc}", partial, exc) from exc
        x_next = np.asarray(out.x_next, dtype=float)
        det = float(np.linalg.det(out.jacobian))
        dets.append(det)
        if system is not None:
            divs.append(step_divergence_integral(system, x, x_next, h))
            mid_trace = divergence(system, 0.5 * (x + x_next))
            denom = h * mid_trace
            ratios.append(math.log(abs(det)) / denom if abs(denom) > RATIO_FLOOR and det != 0 else float("nan"))
        else:
            divs.append(float("nan"))
            ratios.append(float("nan"))
        x = x_next
        times.append((k + 1) * h)
        states.append(x.copy())
    return _build_record(times, states, dets, divs, ratios)


FD4_EPS = np.finfo(float).eps ** (1.0 / 5.0)


def fd_jacobian(step_map: Callable[[np.ndarray], np.ndarray], x, eps: Optional[float] = None,
                order: int = 2) -> np.ndarray:
    """Central-difference Jacobian of a whole step map, the oracle for ``A``.

    ``order=2`` is the three-point stencil; ``order=4`` the five-point one,
    for checks tighter than about 1e-9. The step along ``x_k`` is
    ``eps * max(1, |x_k|)``; ``eps`` defaults to the rounding-optimal value
    for the chosen order.
    """
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    if eps is None:
        eps = FD_EPS if order == 2 else FD4_EPS
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if order == 2:
        return fd_field_jacobian(step_map, x, eps=eps, vectorized=False)
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        step = eps * max(1.0, abs(x[k]))
        e = np.zeros_like(x)
        e[k] = step
        values = [np.asarray(step_map(x + m * e), dtype=float) for m in (1, -1, 2, -2)]
        if not all(np.all(np.isfinite(v)) for v in values):
            raise EvaluationError("non-finite step map value in finite differences", state=x)
        cols.append((8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * step))
    return np.column_stack(cols)


@dataclass(frozen=True)
class RatioProfile:
    """Statistics of ``log|det A| / (h tr F)`` over steps where it is defined."""

    count: int
    min: float = float("nan")
    max: float = float("nan")
    mean: float = float("nan")
    max_deviation: float = float("nan")

    @property
    def empty(self) -> bool:
        return self.count == 0


def ratio_profile(record: TrajectoryRecord) -> RatioProfile:
    values = record.ratio[np.isfinite(record.ratio)]
    if values.size == 0:
        return RatioProfile(0)
    return RatioProfile(
        int(values.size),
        float(values.min()),
        float(values.max()),
        float(values.mean()),
        float(np.max(np.abs(values - 1.0))),
    )


# -- random field families --------------------------------------------------


def random_linear_field(rng, n, L, trace, elliptic_bias=0.0):
    """Random ``F`` with ``tr F = trace`` and ``||F||_2 < L``.

    The traceless part mixes a random symmetric and antisymmetric matrix;
    ``elliptic_bias`` in ``[0, 1]`` weights the antisymmetric part, pushing
    eigenvalues toward the imaginary axis.
    """
    G = rng.standard_normal((n, n))
    sym = 0.5 * (G + G.T)
    sym -= np.trace(sym) / n * np.eye(n)
    skew = 0.5 * (G - G.T)
    if n == 2 and np.allclose(skew, 0.0):
        skew = np.array([[0.0, 1.0], [-1.0, 0.0]])
    skew /= max(np.linalg.norm(skew, 2), 1e-300)
    sym /= max(np.linalg.norm(sym, 2), 1e-300)
    traceless = (1.0 - elliptic_bias) * sym + elliptic_bias * skew
    shift = trace / n * np.eye(n)
    room = 0.95 * L - abs(trace) / n
    if room <= 0:
        raise ContractError(f"trace level {trace} incompatible with bound L={L}")
    scale = room * rng.uniform(0.2, 1.0) / max(np.linalg.norm(traceless, 2), 1e-300)
    return scale * traceless + shift


def _nonlinear_field(omega, level, amp):
    """``(omega v, -omega sin q + gamma(q) v)`` with ``gamma(q) = level (1 + amp cos q)``.

    A pendulum of frequency ``omega`` with position-dependent damping. The
    divergence is ``gamma(q)``, between ``level (1 + amp)`` and
    ``level (1 - amp)``, so ``tr F <= 0`` whenever ``level <= 0``.
    """

    def f(x):
        q, v = x[..., 0], x[..., 1]
        gamma = level * (1.0 + amp * np.cos(q))
        return np.stack([omega * v, -omega * np.sin(q) + gamma * v], axis=-1)

    def jac(x):
        q, v = x[..., 0], x[..., 1]
        gamma = level * (1.0 + amp * np.cos(q))
        dgamma = -level * amp * np.sin(q)
        return np.stack(
            [
                np.stack([np.zeros_like(q), np.full_like(q, omega)], axis=-1),
                np.stack([-omega * np.cos(q) + dgamma * v, gamma], axis=-1),
            ],
            axis=-2,
        )

    return System(2, f, jac, "nonlinear2d", params=(omega, level, amp))


FAMILIES = ("linear2d", "near-elliptic", "nonlinear2d")


def field_family(name: str, rng, L: float, trace: float):
    """Draw one field and the states to test it at.

    Returns ``(system, states)``. ``linear2d`` alternates generic and
    rotation-dominated members; ``near-elliptic`` keeps the traceless part
    almost antisymmetric; ``nonlinear2d`` is a pendulum with
    position-dependent damping, tested on states with ``|v| <= 1``.
    """
    if name == "linear2d":
        bias = rng.choice([0.0, rng.uniform(0.0, 1.0), 0.95])
        F = random_linear_field(rng, 2, L, trace, bias)
        return linear(F, "linear2d"), rng.uniform(-1.0, 1.0, (2, 2))
    if name == "near-elliptic":
        F = random_linear_field(rng, 2, L, trace, rng.uniform(0.9, 1.0))
        return linear(F, "near-elliptic"), rng.uniform(-1.0, 1.0, (2, 2))
    if name == "nonlinear2d":
        # ||F||_2 <= ||F||_F <= 2 omega + |level| (1 + 2 amp) on |v| <= 1
        amp = rng.uniform(0.0, 0.9)
        budget = 0.95 * L - abs(trace) * (1.0 + 2.0 * amp)
        if budget <= 0:
            raise ContractError(f"trace level {trace} incompatible with bound L={L}")
        omega = 0.5 * budget * rng.uniform(0.2, 1.0)
        states = np.column_stack([rng.uniform(-np.pi, np.pi, 3), rng.uniform(-1.0, 1.0, 3)])
        return _nonlinear_field(omega, trace, amp), states
    raise ContractError(f"unknown field family {name!r}; known: {', '.join(FAMILIES)}")


@dataclass
class ComplianceReport:
    """Largest violation-free step per trace level.

    ``h_star[level]`` is the largest grid step ``h`` such that no step in the
    grid up to and including ``h`` produced ``|det A| > 1 + 1e-10``; it is 0
    when the smallest grid step already fails.
    """

    method: str
    field_family: str
    L: float
    h_grid: np.ndarray
    trace_levels: np.ndarray
    h_star: dict
    violations: dict
    verdict: bool
    seed: int
    n_fields: int
    worst_det: dict = field(default_factory=dict)

    def table(self) -> str:
        """Line-oriented text table, one row per trace level."""
        lines = [
            f"# method={self.method} family={self.field_family} L={self.L:.17g} "
            f"n_fields={self.n_fields} seed={self.seed}",
            "trace_level\th_star\tviolating_cells\tworst_det",
        ]
        for level in self.trace_levels:
            lines.append(
                f"{level:.17g}\t{self.h_star[level]:.17g}\t{self.violations[level]}\t"
                f"{self.worst_det[level]:.17g}"
            )
        lines.append(f"verdict={'contractive' if self.verdict else 'not-contractive'}")
        return "\n".join(lines) + "\n"


def _largest_clean(h_grid, bad):
    best = 0.0
    for h, failed in zip(h_grid, bad):
        if failed:
            break
        best = float(h)
    return best


def compliance_scan(
    method: str,
    field_family_name: str,
    L: float,
    h_grid: Sequence[float],
    trace_levels: Sequence[float],
    n_fields: int,
    seed: int = 0,
    solver: SolverConfig = SolverConfig(),
) -> ComplianceReport:
    """Empirical step-size contractivity check of ``method`` over a field family.

    For each trace level ``n_fields`` random fields are drawn, field ``k``
    from a generator seeded by ``(seed, k)`` so that levels differ only in
    the trace shift. Each field is stepped at every grid ``h`` from its
    test states. A solver failure counts as a violation. The verdict compares ``h*`` at the level
    closest to zero (excluding exactly zero) with ``h*`` at the most
    negative level: contractive iff the former is at least half the latter.
    """
    h_grid = np.sort(np.asarray(h_grid, dtype=float))
    levels = np.asarray(trace_levels, dtype=float)
    if np.any(levels > 0):
        raise ContractError("trace levels must be <= 0")
    if np.any(h_grid <= 0):
        raise ContractError("h grid must be positive")
    h_star, violations, worst = {}, {}, {}
    for li, level in enumerate(levels):
        # common random numbers: field k uses the same draws at every level
        draws = [
            field_family(field_family_name, np.random.default_rng([seed, k]), L, float(level))
            for k in range(n_fields)
        ]
        bad = []
        count = 0
        worst_det = -np.inf
        for h in h_grid:
            failed = False
            for system, states in draws:
                stepper = make_stepper(method, system, solver)
                for x in states:
                    try:
                        det = abs(stepper(x, float(h)).det)
                    except ContractError:
                        det = np.inf
                    worst_det = max(worst_det, det)
                    if det > 1.0 + VIOLATION_TOL:
                        failed = True
            bad.append(failed)
            count += int(failed)
        h_star[float(level)] = _largest_clean(h_grid, bad)
        violations[float(level)] = count
        worst[float(level)] = float(worst_det)
    nonzero = [float(l) for l in levels if l < 0]
    if len(nonzero) >= 2:
        weakest, strongest = max(nonzero), min(nonzero)
        verdict = h_star[weakest] >= 0.5 * h_star[strongest] and h_star[weakest] > 0
    else:
        verdict = all(v > 0 for v in h_star.values())
    return ComplianceReport(
        method, field_family_name, float(L), h_grid, np.array([float(l) for l in levels]),
        h_star, violations, bool(verdict), seed, n_fields, worst,
    )
