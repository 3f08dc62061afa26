"""Splitting a weakly contractive field into 2D (and 1D) contractive pieces.

The field is first detraced: ``g_i = f_i - r_i I_i`` where ``r_i = sum_j s_ij``
and ``I_i(x)`` is the integral of ``tr F`` along the ``x_i`` axis from the
anchor. ``g`` is divergence free and is split further into divergence-free
pieces, while the removed parts form the dissipative S-pieces
``(s_ij I_i, s_ji I_j)`` on each index pair.

Two layouts for the divergence-free part are offered. ``tridiagonal`` uses
``n - 1`` pieces on neighbouring coordinates ``(k, k+1)``. Piece ``k`` has
components ``U_k = g_k - V_{k-1}`` and ``V_k = -int D_k dx_{k+1}`` with the
partial divergence ``D_k = sum_{m<=k} dg_m/dx_m``; the last ``V`` also gets
``g_n`` evaluated on the anchor plane, which is independent of ``x_n`` and
makes the pieces sum back to ``g``. ``full`` uses one piece per pair
``(i, j)`` with components ``(g_i - int dg_j/dx_j dx_i) / n`` and
``(g_j - int dg_i/dx_i dx_j) / n`` plus 1D pieces ``g_i(anchor plane) / n``.

Piece Jacobians are assembled so that the diagonal entries in the active
coordinates come from the system Jacobian directly, which keeps the trace of
every divergence-free piece exactly zero; the remaining entries are central
differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ClosureError, ContractError, IndefiniteError
from ..systems import (
    FD_EPS,
    Contractivity,
    System,
    as_box,
    classify_samples,
    divergence_batch,
    jacobian_batch,
)
from .weights import WeightMatrix, weight_scheme

CONSTANT_TRACE_TOL = 1e-12


@dataclass(frozen=True)
class QuadratureConfig:
    """Gauss-Legendre node count, derivative stencil step and acceptance tolerance."""

    nodes: int = 32
    fd_step: float = 1e-5
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.nodes < 8:
            raise ContractError("quadrature needs at least 8 nodes")
        if not self.tolerance > 0 or not self.fd_step > 0:
            raise ContractError("quadrature tolerance and fd_step must be positive")


@lru_cache(maxsize=None)
def _gauss_legendre(nodes):
    t, w = np.polynomial.legendre.leggauss(nodes)
    t.setflags(write=False)
    w.setflags(write=False)
    return t, w


def axis_integral(func, states, axis, anchor, quad: QuadratureConfig):
    """``int_{anchor[axis]}^{x[axis]} func(x with x[axis] = xi) dxi`` per state.

    ``func`` maps a batch ``(M, n)`` to ``(M,)`` or ``(M, k)``.
    """
    states = np.atleast_2d(states)
    m, n = states.shape
    t, w = _gauss_legendre(quad.nodes)
    c = anchor[axis]
    half = 0.5 * (states[:, axis] - c)
    mid = 0.5 * (states[:, axis] + c)
    pts = np.repeat(states[:, None, :], len(t), axis=1)
    pts[:, :, axis] = mid[:, None] + half[:, None] * t[None, :]
    vals = np.asarray(func(pts.reshape(-1, n)))
    vals = vals.reshape((m, len(t)) + vals.shape[1:])
    integral = np.tensordot(vals, w, axes=([1], [0])) if vals.ndim == 2 else np.einsum("mk...,k->m...", vals, w)
    if vals.ndim > 2:
        return half[:, None] * integral
    return half * integral


def _on_plane(states, axis, anchor):
    out = np.array(states, dtype=float, copy=True)
    out[:, axis] = anchor[axis]
    return out


def _batched(fn):
    """Let a batch function ``(m, n) -> (m, n)`` also take one state."""

    def wrapper(x):
        x = np.asarray(x)
        if x.ndim == 1:
            return fn(x[None, :])[0]
        lead = x.shape[:-1]
        return fn(x.reshape(-1, x.shape[-1])).reshape(lead + (x.shape[-1],))

    return wrapper


def _fd_rows(component_fns, rows, x, n):
    """Central-difference rows ``rows`` of a Jacobian from component functions."""
    steps = FD_EPS * np.maximum(1.0, np.abs(x))
    offsets = np.diag(steps)
    stacked = np.concatenate([x + offsets, x - offsets])
    jac = np.zeros((n, n))
    for row, fn in zip(rows, component_fns):
        vals = np.asarray(fn(stacked))
        jac[row] = (vals[:n] - vals[n:]) / (2.0 * steps)
    return jac


# -- detracing --------------------------------------------------------------


class DetracedField:
    """The divergence-free field ``g_i = f_i - r_i I_i``.

    ``constant_trace`` switches the axis integrals to the closed form
    ``tr F * (x_i - c_i)``.
    """

    def __init__(self, system, weights, anchor, quad, constant_trace=None):
        self.system = system
        self.weights = weights
        self.anchor = np.asarray(anchor, dtype=float)
        self.quad = quad
        self.constant_trace = constant_trace
        self.row_sums = weights.row_sums
        self.dim = system.dim

    def trace(self, states):
        states = np.atleast_2d(states)
        if self.constant_trace is not None:
            return np.full(states.shape[0], self.constant_trace)
        return divergence_batch(self.system, states)

    def trace_integral(self, states, axis):
        """``I_axis``: integral of ``tr F`` along ``x_axis`` from the anchor."""
        states = np.atleast_2d(states)
        if self.constant_trace is not None:
            return self.constant_trace * (states[:, axis] - self.anchor[axis])
        return axis_integral(self.trace, states, axis, self.anchor, self.quad)

    def batch(self, states):
        states = np.atleast_2d(states)
        out = np.array(self.system.field(states), dtype=float)
        for i in range(self.dim):
            if self.row_sums[i] != 0.0:
                out[:, i] -= self.row_sums[i] * self.trace_integral(states, i)
        return out

    def __call__(self, x):
        return _batched(self.batch)(x)

    def diag_derivatives(self, states):
        """``dg_i/dx_i`` for every ``i``, shape ``(m, n)``."""
        states = np.atleast_2d(states)
        jac = jacobian_batch(self.system, states)
        diag = np.diagonal(jac, axis1=-2, axis2=-1).copy()
        trace = np.trace(jac, axis1=-2, axis2=-1)
        return diag - self.row_sums[None, :] * trace[:, None]


def detrace(system: System, weights: WeightMatrix, anchor=None, quad=None, constant_trace=None):
    """Remove the weighted divergence from ``system``.

    Returns a :class:`DetracedField` callable on one state or a batch.
    """
    if system.dim < 2:
        raise ContractError("splitting requires n >= 2")
    if weights.n != system.dim:
        raise ContractError(f"weights are {weights.n}x{weights.n} for a dim {system.dim} system")
    anchor = np.zeros(system.dim) if anchor is None else np.asarray(anchor, dtype=float)
    return DetracedField(system, weights, anchor, quad or QuadratureConfig(), constant_trace)


class _CallableDivergenceFree:
    """Adapter giving a plain callable the ``diag_derivatives`` interface."""

    def __init__(self, fn, n, quad):
        self.fn = fn
        self.dim = n
        self.quad = quad

    def batch(self, states):
        return np.asarray(self.fn(np.atleast_2d(states)), dtype=float)

    def __call__(self, x):
        return self.fn(x)

    def diag_derivatives(self, states):
        states = np.atleast_2d(states)
        out = np.empty_like(states)
        for k in range(self.dim):
            step = self.quad.fd_step * np.maximum(1.0, np.abs(states[:, k]))
            plus = states.copy()
            minus = states.copy()
            plus[:, k] += step
            minus[:, k] -= step
            out[:, k] = (self.batch(plus)[:, k] - self.batch(minus)[:, k]) / (2.0 * step)
        return out


def _as_divergence_free(g, n, quad):
    if hasattr(g, "diag_derivatives") and hasattr(g, "batch"):
        return g
    return _CallableDivergenceFree(g, n, quad)


# -- pieces -----------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    """One subsystem of a splitting, acting on ``indices`` only.

    ``kind`` is ``"S"`` (dissipative), ``"A"`` (divergence free) or
    ``"combined"``. ``system`` is a full-dimensional System whose field
    vanishes outside ``indices``.
    """

    indices: Tuple[int, ...]
    kind: str
    system: System

    @property
    def label(self):
        return f"{self.kind}(" + ",".join(str(i + 1) for i in self.indices) + ")"


def _make_piece(indices, kind, n, components, exact_diag, name):
    """Wrap component functions into a :class:`Piece`.

    ``components`` maps each active index to a batch function ``(m, n) -> (m,)``
    and ``exact_diag`` maps the same indices to the derivative of that
    component along its own coordinate.
    """
    indices = tuple(indices)

    def batch(states):
        states = np.atleast_2d(states)
        out = np.zeros_like(states, dtype=float)
        for idx in indices:
            out[:, idx] = components[idx](states)
        return out

    def jac_single(x):
        x = np.asarray(x, dtype=float)
        jac = _fd_rows([components[i] for i in indices], indices, x, n)
        for i in indices:
            jac[i, i] = float(exact_diag[i](x[None, :])[0])
        return jac

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return jac_single(x)
        flat = x.reshape(-1, n)
        return np.array([jac_single(s) for s in flat]).reshape(x.shape + (n,))

    system = System(n, _batched(batch), jacobian, name=name)
    return Piece(indices, kind, system)


def s_pieces(g: DetracedField) -> List[Piece]:
    """Dissipative pieces ``(s_ij I_i, s_ji I_j)`` and 1D pieces ``s_ii I_i``."""
    s = g.weights.entries
    n = g.dim
    pieces = []
    for i in range(n):
        for j in range(i, n):
            if i == j and s[i, i] == 0.0:
                continue
            if i != j and s[i, j] == 0.0 and s[j, i] == 0.0:
                continue
            idx = (i,) if i == j else (i, j)
            comps, diag = {}, {}
            for a, b in ((i, j), (j, i)) if i != j else ((i, i),):
                w = s[a, b]
                comps[a] = (lambda X, a=a, w=w: w * g.trace_integral(X, a))
                diag[a] = (lambda X, w=w: w * g.trace(X))
            label = "S(" + ",".join(str(k + 1) for k in idx) + ")"
            pieces.append(_make_piece(idx, "S", n, comps, diag, label))
    return pieces


class _Tridiagonal:
    def __init__(self, g, n, anchor, quad):
        self.g = g
        self.n = n
        self.anchor = np.asarray(anchor, dtype=float)
        self.quad = quad

    def partial_div(self, states, k):
        return self.g.diag_derivatives(states)[:, : k + 1].sum(axis=1)

    def closure_term(self, states):
        last = self.n - 1
        return self.g.batch(_on_plane(states, last, self.anchor))[:, last]

    def V(self, states, k):
        states = np.atleast_2d(states)
        out = -axis_integral(lambda P: self.partial_div(P, k), states, k + 1, self.anchor, self.quad)
        if k == self.n - 2:
            out = out + self.closure_term(states)
        return out

    def U(self, states, k):
        states = np.atleast_2d(states)
        out = self.g.batch(states)[:, k]
        if k > 0:
            out = out - self.V(states, k - 1)
        return out


def feng_wang_pieces(g, n: int, anchor=None, quad=None, samples=None, check=True) -> List[Piece]:
    """Split a divergence-free field into ``n - 1`` pieces on ``(k, k+1)``.

    ``g`` is a :class:`DetracedField` or a plain callable; for the latter the
    needed diagonal derivatives are taken by central differences with step
    ``quad.fd_step * max(1, |x|)``.

    Raises :class:`ClosureError` when the last piece fails to reproduce
    ``g_n`` on the sample states to ``quad.tolerance``.
    """
    if n < 2:
        raise ContractError("splitting requires n >= 2")
    quad = quad or QuadratureConfig()
    anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
    g = _as_divergence_free(g, n, quad)
    tri = _Tridiagonal(g, n, anchor, quad)
    pieces = []
    for k in range(n - 1):
        comps = {
            k: (lambda X, k=k: tri.U(X, k)),
            k + 1: (lambda X, k=k: tri.V(X, k)),
        }
        diag = {
            k: (lambda X, k=k: tri.partial_div(X, k)),
            k + 1: (lambda X, k=k: -tri.partial_div(X, k)),
        }
        pieces.append(_make_piece((k, k + 1), "A", n, comps, diag, f"A({k + 1},{k + 2})"))
    if check:
        if samples is None:
            samples = anchor + np.random.default_rng(0).uniform(-1.0, 1.0, (20, n))
        residual = closure_residual(g, pieces, samples)
        if residual > quad.tolerance:
            raise ClosureError(
                f"divergence-free splitting does not close: residual {residual:.3e}", residual
            )
    return pieces


def full_pieces(g, n: int, anchor=None, quad=None) -> List[Piece]:
    """Split a divergence-free field into ``n(n-1)/2`` pair pieces plus 1D pieces."""
    if n < 2:
        raise ContractError("splitting requires n >= 2")
    quad = quad or QuadratureConfig()
    anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
    g = _as_divergence_free(g, n, quad)

    def dd(states, k):
        return g.diag_derivatives(np.atleast_2d(states))[:, k]

    def pair_comp(states, i, j):
        states = np.atleast_2d(states)
        integral = axis_integral(lambda P: dd(P, j), states, i, anchor, quad)
        return (g.batch(states)[:, i] - integral) / n

    pieces = []
    for i in range(n):
        for j in range(i + 1, n):
            comps = {
                i: (lambda X, i=i, j=j: pair_comp(X, i, j)),
                j: (lambda X, i=i, j=j: pair_comp(X, j, i)),
            }
            diag = {
                i: (lambda X, i=i, j=j: (dd(X, i) - dd(X, j)) / n),
                j: (lambda X, i=i, j=j: (dd(X, j) - dd(X, i)) / n),
            }
            pieces.append(_make_piece((i, j), "A", n, comps, diag, f"A({i + 1},{j + 1})"))
    for i in range(n):
        comps = {i: (lambda X, i=i: g.batch(_on_plane(np.atleast_2d(X), i, anchor))[:, i] / n)}
        diag = {i: (lambda X: np.zeros(np.atleast_2d(X).shape[0]))}
        pieces.append(_make_piece((i,), "A", n, comps, diag, f"A({i + 1})"))
    return pieces


def closure_residual(g, pieces, states) -> float:
    """``max |V_{n-1} - g_n|`` for a tridiagonal construction."""
    states = np.atleast_2d(states)
    last = pieces[-1]
    n = states.shape[1]
    got = last.system.field(states)[:, n - 1]
    want = np.asarray(g.batch(states) if hasattr(g, "batch") else g(states))[:, n - 1]
    return float(np.max(np.abs(got - want)))


def merge_pieces(pieces: Sequence[Piece]) -> List[Piece]:
    """Sum pieces that act on the same index set into ``combined`` pieces."""
    groups = {}
    for piece in pieces:
        groups.setdefault(piece.indices, []).append(piece)
    merged = []
    for idx, group in groups.items():
        if len(group) == 1:
            merged.append(group[0])
            continue
        systems = [p.system for p in group]
        n = systems[0].dim

        def field(x, systems=systems):
            return sum(np.asarray(s.field(x)) for s in systems)

        def jacobian(x, systems=systems):
            return sum(np.asarray(s.jacobian(x)) for s in systems)

        label = "combined(" + ",".join(str(i + 1) for i in idx) + ")"
        merged.append(Piece(idx, "combined", System(n, field, jacobian, name=label)))
    return merged


# -- plans ------------------------------------------------------------------


@dataclass
class PlanCheck:
    reconstruction_residual: float
    closure_residual: Optional[float]
    piece_divergence: List[Tuple[str, float, float]]
    s_piece_trace_error: float
    n_states: int

    @property
    def max_piece_divergence(self):
        return max(hi for _, _, hi in self.piece_divergence)


@dataclass
class SplittingPlan:
    """A splitting of ``system`` into contractive pieces, applied in order."""

    system: System
    weights: WeightMatrix
    anchor: np.ndarray
    pieces: List[Piece]
    quad: QuadratureConfig
    layout: str = "tridiagonal"
    constant_trace: Optional[float] = None
    detraced: Optional[DetracedField] = dc_field(default=None, repr=False)

    def field_sum(self, states):
        states = np.atleast_2d(states)
        return sum(np.asarray(p.system.field(states)) for p in self.pieces)

    def check(self, states) -> PlanCheck:
        """Reconstruction, closure and per-piece divergence on ``states``.

        Piece divergences here are central differences of the piece fields,
        independent of the assembled piece Jacobians.
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        f = np.asarray(self.system.field(states))
        recon = float(np.max(np.abs(self.field_sum(states) - f)))
        closure = None
        a_pieces = [p for p in self.pieces if p.kind == "A"]
        if self.layout == "tridiagonal" and a_pieces and self.detraced is not None:
            closure = closure_residual(self.detraced, a_pieces, states)
        divs = []
        s_err = 0.0
        trace = divergence_batch(self.system, states)
        for piece in self.pieces:
            d = fd_divergence(piece.system.field, states, piece.indices, self.quad.fd_step)
            divs.append((piece.label, float(d.min()), float(d.max())))
            if piece.kind == "S":
                s = self.weights.entries
                idx = piece.indices
                coeff = s[idx[0], idx[0]] if len(idx) == 1 else s[idx[0], idx[1]] + s[idx[1], idx[0]]
                s_err = max(s_err, float(np.max(np.abs(d - coeff * trace))))
        return PlanCheck(recon, closure, divs, s_err, states.shape[0])

    def manifest(self) -> str:
        return format_manifest(self)


def fd_divergence(field, states, indices, fd_step):
    """Divergence over the active coordinates by a fourth-order central stencil.

    The stencil step is ``10 * fd_step * max(1, |x_k|)``; the wider step keeps
    rounding noise well below the truncation-free polynomial case.
    """
    states = np.atleast_2d(states)
    total = np.zeros(states.shape[0])
    for k in indices:
        step = 10.0 * fd_step * np.maximum(1.0, np.abs(states[:, k]))

        def shifted(mult):
            moved = states.copy()
            moved[:, k] += mult * step
            return np.asarray(field(moved))[:, k]

        total += (8.0 * (shifted(1) - shifted(-1)) - (shifted(2) - shifted(-2))) / (12.0 * step)
    return total


def contractive_plan(
    system: System,
    weights,
    anchor=None,
    quad: Optional[QuadratureConfig] = None,
    *,
    layout: str = "tridiagonal",
    region=None,
    n_samples: int = 100,
    seed: int = 0,
    merge: bool = False,
) -> SplittingPlan:
    """Build the S- and A-pieces for a weakly contractive system.

    ``weights`` is a :class:`WeightMatrix` or a scheme label. The divergence
    is sampled on ``region`` (default: the unit box around the anchor); a
    positive sample refuses the plan, a constant one selects closed-form
    axis integrals.
    """
    n = system.dim
    if n < 2:
        raise ContractError("splitting requires n >= 2")
    if not isinstance(weights, WeightMatrix):
        weights = weight_scheme(n, weights)
    if weights.n != n:
        raise ContractError(f"weights are {weights.n}x{weights.n} for a dim {n} system")
    quad = quad or QuadratureConfig()
    anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
    if region is None:
        region = np.stack([anchor - 1.0, anchor + 1.0], axis=1)
    lo, hi = as_box(region, n)
    rng = np.random.default_rng(seed)
    samples = lo + (hi - lo) * rng.random((max(n_samples, 1), n))
    traces = divergence_batch(system, samples)
    verdict = classify_samples(samples, traces)
    if verdict.kind is Contractivity.INDEFINITE:
        worst = int(np.argmax(traces))
        raise IndefiniteError(
            f"{system.name} is not weakly contractive: tr F = {traces[worst]:.6g} "
            f"at state {np.array2string(samples[worst], precision=6)}",
            state=samples[worst],
            trace=float(traces[worst]),
        )
    constant = None
    if np.ptp(traces) <= CONSTANT_TRACE_TOL * max(1.0, float(np.max(np.abs(traces)))):
        constant = float(np.mean(traces))

    g = detrace(system, weights, anchor, quad, constant_trace=constant)
    if layout == "tridiagonal":
        a_pieces = feng_wang_pieces(g, n, anchor, quad, samples=samples[:20])
    elif layout == "full":
        a_pieces = full_pieces(g, n, anchor, quad)
    else:
        raise ContractError(f"unknown layout {layout!r}")
    # zero divergence: the S-pieces are zero fields and are left out
    volume_preserving = constant is not None and abs(constant) <= CONSTANT_TRACE_TOL
    pieces = (a_pieces if volume_preserving else s_pieces(g) + a_pieces)
    if merge:
        pieces = merge_pieces(pieces)
    return SplittingPlan(system, weights, anchor, pieces, quad, layout, constant, g)


def plan_from_pieces(system, fields, weights=None, anchor=None, quad=None) -> SplittingPlan:
    """Plan from hand-derived pieces.

    ``fields`` is a sequence of ``(indices, kind, field)`` with 0-based
    indices; Jacobians are taken by finite differences.
    """
    n = system.dim
    pieces = [
        Piece(tuple(idx), kind, System(n, fn, None, name=f"{kind}{tuple(i + 1 for i in idx)}"))
        for idx, kind, fn in fields
    ]
    weights = weights or weight_scheme(n, "diag-1overn")
    anchor = np.zeros(n) if anchor is None else np.asarray(anchor, dtype=float)
    return SplittingPlan(system, weights, anchor, pieces, quad or QuadratureConfig(), "custom")


# -- manifests --------------------------------------------------------------


def format_manifest(plan: SplittingPlan) -> str:
    def vec(v):
        return ", ".join(f"{float(x):.17g}" for x in v)

    lines = [
        f"system = {plan.system.name}",
        f"params = {vec(plan.system.params)}",
        f"scheme = {plan.weights.scheme}",
        f"layout = {plan.layout}",
        f"anchor = {vec(plan.anchor)}",
        f"quad_nodes = {plan.quad.nodes}",
        f"quad_fd_step = {plan.quad.fd_step!r}",
        f"quad_tolerance = {plan.quad.tolerance!r}",
        "pieces = " + "; ".join(p.label for p in plan.pieces),
    ]
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"manifest line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value
    for key in ("system", "scheme"):
        if key not in fields:
            raise ContractError(f"manifest is missing {key!r}")

    def floats(text):
        return tuple(float(v) for v in text.split(",") if v.strip())

    return {
        "system": fields["system"],
        "params": floats(fields.get("params", "")),
        "scheme": fields["scheme"],
        "layout": fields.get("layout", "tridiagonal"),
        "anchor": floats(fields["anchor"]) if "anchor" in fields else None,
        "quad": QuadratureConfig(
            int(fields.get("quad_nodes", 32)),
            float(fields.get("quad_fd_step", 1e-5)),
            float(fields.get("quad_tolerance", 1e-8)),
        ),
        "pieces": [p.strip() for p in fields.get("pieces", "").split(";") if p.strip()],
    }
