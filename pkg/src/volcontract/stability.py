"""Linear stability analysis of Runge-Kutta tableaux in the contraction setting.

The stability function is carried in rational form ``R = P/Q`` with
``Q(z) = det(I - zA)`` and ``P(z) = det(I - zA + z 1 b^T)``. Polynomial
coefficients are exact rationals when the tableau is rational, which keeps
sign-critical quantities (``R(u)R(-u) - 1`` near ``u = 0``, ``b < a``) free of
cancellation.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

import numpy as np

from .errors import ContractError, PoleError
from .tableaus import ButcherTableau

PRODUCT_TOL = 1e-14
EQUALITY_TOL = 1e-12
POLE_TOL = 1e-14


# -- polynomial helpers (ascending coefficients) -----------------------------


def _padd(p, q):
    n = max(len(p), len(q))
    zero = p[0] * 0 if p else 0
    return [(p[k] if k < len(p) else zero) + (q[k] if k < len(q) else zero) for k in range(n)]


def _pmul(p, q):
    out = [p[0] * 0] * (len(p) + len(q) - 1)
    for i, pi in enumerate(p):
        for j, qj in enumerate(q):
            out[i + j] = out[i + j] + pi * qj
    return out


def _pneg_arg(p):
    """Coefficients of ``p(-z)``."""
    return [c if k % 2 == 0 else -c for k, c in enumerate(p)]


def _ptrim(p):
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def _peval(p, z):
    acc = 0.0 * z
    for c in reversed(p):
        acc = acc * z + float(c)
    return acc


def _poly_det(matrix):
    """Determinant of a matrix of linear polynomials by Leibniz expansion."""
    s = len(matrix)
    total = [matrix[0][0][0] * 0]
    for perm in itertools.permutations(range(s)):
        inversions = sum(1 for i in range(s) for j in range(i + 1, s) if perm[i] > perm[j])
        term = [matrix[0][0][0] * 0 + 1]
        for i in range(s):
            term = _pmul(term, matrix[i][perm[i]])
        if inversions % 2:
            term = [-c for c in term]
        total = _padd(total, term)
    return _ptrim(total)


def _coefficients(tableau):
    if tableau.is_exact:
        return [list(row) for row in tableau.exact_a], list(tableau.exact_b), True
    return tableau.a.tolist(), tableau.b.tolist(), False


@dataclass(frozen=True)
class RationalForm:
    """``R(z) = P(z) / Q(z)`` with ascending coefficient lists."""

    P: tuple
    Q: tuple
    exact: bool

    def __call__(self, z):
        return _peval(self.P, z) / _peval(self.Q, z)


def rational_form(tableau: ButcherTableau) -> RationalForm:
    a, b, exact = _coefficients(tableau)
    s = tableau.s
    one = Fraction(1) if exact else 1.0
    zero = one * 0
    q_mat = [[[one if i == j else zero, -a[i][j]] for j in range(s)] for i in range(s)]
    p_mat = [[[q_mat[i][j][0], q_mat[i][j][1] + b[j]] for j in range(s)] for i in range(s)]
    return RationalForm(tuple(_poly_det(p_mat)), tuple(_poly_det(q_mat)), exact)


def stability_function(tableau: ButcherTableau, z) -> complex:
    """``R(z)``, the step Jacobian of the method on ``x' = z x`` with ``h = 1``.

    Raises :class:`PoleError` where ``I - zA`` is singular.
    """
    form = rational_form(tableau)
    z = complex(z)
    denom = _peval(form.Q, z)
    if abs(denom) <= POLE_TOL:
        raise PoleError(f"{tableau.name}: stability function has a pole at z={z}", z=z)
    return _peval(form.P, z) / denom


def resolvent_stability(tableau: ButcherTableau, z) -> complex:
    """``1 + z b^T (I - zA)^{-1} 1`` by a dense solve."""
    s = tableau.s
    mat = np.eye(s) - complex(z) * tableau.a
    try:
        sol = np.linalg.solve(mat, np.ones(s, dtype=complex))
    except np.linalg.LinAlgError:
        raise PoleError(f"{tableau.name}: singular resolvent at z={z}", z=z) from None
    return 1.0 + complex(z) * (tableau.b @ sol)


# -- series and Prop. 6 style criterion -------------------------------------


class Verdict(enum.Enum):
    CONTRACTIVE = "Contractive"
    NOT_CONTRACTIVE = "NotContractive"
    BORDERLINE = "Borderline"


@dataclass
class StabilityReport:
    """Order and leading error coefficients of ``R(z) - e^z``.

    ``coeff_a`` and ``coeff_b`` are the coefficients of ``z^(p+1)`` and
    ``z^(p+2)``. They are ``Fraction`` for rational tableaux.
    """

    name: str
    order: int
    coeff_a: object
    coeff_b: object
    series: tuple
    exact: bool
    prop6_verdict: Optional[Verdict] = None
    lemma5_ustar: Optional[float] = None
    lemma5: Optional["Lemma5Result"] = None
    symplectic: Optional[bool] = None


def series_coefficients(tableau: ButcherTableau, terms: int):
    """Taylor coefficients ``r_0 .. r_{terms-1}`` of ``R``.

    Uses ``r_0 = 1`` and ``r_k = b^T A^(k-1) 1``.
    """
    a, b, exact = _coefficients(tableau)
    s = tableau.s
    one = Fraction(1) if exact else 1.0
    vec = [one] * s
    coeffs = [one]
    for _ in range(1, terms):
        coeffs.append(sum((b[i] * vec[i] for i in range(s)), one * 0))
        vec = [sum((a[i][j] * vec[j] for j in range(s)), one * 0) for i in range(s)]
    return coeffs


def _exp_coeff(k, exact):
    return Fraction(1, math.factorial(k)) if exact else 1.0 / math.factorial(k)


def stability_series(tableau: ButcherTableau, terms: Optional[int] = None) -> StabilityReport:
    """Order ``p`` and the coefficients ``a``, ``b`` of ``R(z) - e^z``.

    ``terms`` is a starting count; more coefficients are generated as needed
    so that ``terms >= p + 3`` always holds.
    """
    exact = tableau.is_exact
    terms = max(terms or 0, 2 * tableau.s + 4)
    while True:
        coeffs = series_coefficients(tableau, terms)
        diffs = [c - _exp_coeff(k, exact) for k, c in enumerate(coeffs)]
        if exact:
            mismatched = [k for k, d in enumerate(diffs) if d != 0]
        else:
            mismatched = [k for k, d in enumerate(diffs) if abs(d) > EQUALITY_TOL]
        if mismatched and mismatched[0] + 2 < terms:
            break
        if terms > 60:
            raise ContractError(f"{tableau.name}: no deviation from e^z within {terms} terms")
        terms *= 2
    p = mismatched[0] - 1
    if p < 1:
        raise ContractError(f"{tableau.name}: inconsistent tableau (order 0)")
    return StabilityReport(
        name=tableau.name,
        order=p,
        coeff_a=diffs[p + 1],
        coeff_b=diffs[p + 2],
        series=tuple(coeffs),
        exact=exact,
    )


def prop6_criterion(report: StabilityReport) -> Verdict:
    """Sufficient condition for 2D linear contractivity from ``p``, ``a``, ``b``.

    Contractive if ``4 | p+1`` and ``a < 0`` or ``4 | p+2`` and ``b < a``.
    Equality in the applicable comparison gives ``BORDERLINE``.
    """
    p, a, b = report.order, report.coeff_a, report.coeff_b
    if (p + 1) % 4 == 0:
        gap = float(a)
    elif (p + 2) % 4 == 0:
        gap = float(b - a)
    else:
        return Verdict.NOT_CONTRACTIVE
    if report.exact and gap == 0 or abs(gap) <= EQUALITY_TOL:
        return Verdict.BORDERLINE
    return Verdict.CONTRACTIVE if gap < 0 else Verdict.NOT_CONTRACTIVE


# -- product scan R(u)R(-u) --------------------------------------------------


@dataclass(frozen=True)
class ProductPolynomials:
    """``R(z)R(-z) - 1 = N(z) / D(z)`` with even polynomials ``N`` and ``D``."""

    N: tuple
    D: tuple

    def deviation(self, u: float, axis: str) -> float:
        """``R(u)R(-u) - 1`` (``axis='real'``) or ``|R(iu)|^2 - 1``."""
        z = u if axis == "real" else 1j * u
        value = _peval(self.N, z) / _peval(self.D, z)
        return float(np.real(value))

    def denominator(self, u: float, axis: str) -> float:
        z = u if axis == "real" else 1j * u
        return float(np.real(_peval(self.D, z)))


def product_polynomials(tableau: ButcherTableau) -> ProductPolynomials:
    form = rational_form(tableau)
    ep = _pmul(list(form.P), _pneg_arg(list(form.P)))
    eq = _pmul(list(form.Q), _pneg_arg(list(form.Q)))
    num = _ptrim([c for c in _padd(ep, [-c for c in eq])])
    return ProductPolynomials(tuple(num), tuple(_ptrim(eq)))


@dataclass(frozen=True)
class Lemma5Result:
    """Outcome of scanning ``R(u)R(-u) <= 1`` and ``R(iu)R(-iu) <= 1``.

    ``u_star`` is the largest sampled ``u`` below which every sample passed.
    ``violation`` is the first failing ``u`` refined by bisection, with the
    axis it failed on; ``pole`` is set when the scan stopped at a pole.
    """

    passed: bool
    u_star: float
    u_max: float
    violation: Optional[float] = None
    axis: Optional[str] = None
    pole: bool = False
    max_real_deviation: float = 0.0
    max_imag_deviation: float = 0.0


def lemma5_scan(
    tableau: ButcherTableau, u_max: float, n_samples: int = 2000, tol: float = PRODUCT_TOL
) -> Lemma5Result:
    """Scan ``[0, u_max]`` uniformly for the two traceless eigenvalue cases.

    In two dimensions a traceless real matrix has eigenvalues ``(u, -u)`` or
    ``(iu, -iu)``; the determinant of the step Jacobian is then
    ``R(u)R(-u)`` or ``|R(iu)|^2``.
    """
    if not u_max > 0:
        raise ValueError("u_max must be positive")
    poly = product_polynomials(tableau)
    grid = np.linspace(0.0, u_max, max(int(n_samples), 2))
    max_dev = {"real": -np.inf, "imag": -np.inf}
    last_good = 0.0

    def failing_axis(u):
        for axis in ("real", "imag"):
            if abs(poly.denominator(u, axis)) <= POLE_TOL:
                return axis, True
            if poly.deviation(u, axis) > tol:
                return axis, False
        return None, False

    for u in grid:
        axis, pole = failing_axis(u)
        if axis is None:
            for ax in ("real", "imag"):
                max_dev[ax] = max(max_dev[ax], poly.deviation(u, ax))
            last_good = float(u)
            continue
        if pole:
            return Lemma5Result(
                False, last_good, u_max, float(u), axis, True, max_dev["real"], max_dev["imag"]
            )
        lo, hi = last_good, float(u)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if failing_axis(mid)[0] is None:
                lo = mid
            else:
                hi = mid
        if poly.deviation(hi, axis) <= tol:
            axis = failing_axis(hi)[0] or axis
        return Lemma5Result(
            False, last_good, u_max, hi, axis, False, max_dev["real"], max_dev["imag"]
        )
    return Lemma5Result(True, float(u_max), u_max, None, None, False, max_dev["real"], max_dev["imag"])


# -- order star -------------------------------------------------------------


class OrderStarPoint(NamedTuple):
    member: bool
    pole: bool = False

    def __bool__(self):
        return self.member


def order_star_member(tableau: ButcherTableau, z) -> OrderStarPoint:
    """Whether ``|R(z)| < |e^z|``; poles are reported as non-members."""
    form = rational_form(tableau)
    z = complex(z)
    denom = abs(_peval(form.Q, z))
    if denom <= POLE_TOL:
        return OrderStarPoint(False, True)
    return OrderStarPoint(bool(abs(_peval(form.P, z)) < denom * math.exp(z.real)), False)


def order_star_mask(tableau: ButcherTableau, zs) -> np.ndarray:
    """Vectorised membership test over an array of complex points."""
    form = rational_form(tableau)
    zs = np.asarray(zs, dtype=complex)
    return np.abs(_peval(form.P, zs)) < np.abs(_peval(form.Q, zs)) * np.exp(zs.real)


# -- Euler in n dimensions --------------------------------------------------


class TraceSquareResult(NamedTuple):
    trace_square: float
    frobenius_gap: float
    sector_ok: Optional[bool]
    zero_eigenvalues: int
    sector_margin: Optional[float]


def euler_trace_square_test(F, zero_tol: float = 1e-12) -> TraceSquareResult:
    """``tr(F^2)``, ``||S||^2 - ||A||^2`` and the eigenvalue sector test.

    ``sector_ok`` holds when every nonzero eigenvalue has ``|Re| >= |Im|``,
    i.e. lies outside ``pi/4 < |arg| < 3pi/4``. Zero eigenvalues are counted
    separately because they contribute nothing to ``tr(F^2)``.
    ``sector_margin`` is ``min(|Re| - |Im|)`` over nonzero eigenvalues.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError("F must be square")
    sym = 0.5 * (F + F.T)
    skew = 0.5 * (F - F.T)
    trace_square = float(np.trace(F @ F))
    gap = float(np.sum(sym * sym) - np.sum(skew * skew))
    try:
        eigs = np.linalg.eigvals(F)
    except np.linalg.LinAlgError:
        return TraceSquareResult(trace_square, gap, None, 0, None)
    scale = max(1.0, float(np.max(np.abs(F))))
    zero = np.abs(eigs) <= zero_tol * scale
    nonzero = eigs[~zero]
    if nonzero.size == 0:
        return TraceSquareResult(trace_square, gap, True, int(zero.sum()), None)
    margins = np.abs(nonzero.real) - np.abs(nonzero.imag)
    margin = float(np.min(margins))
    return TraceSquareResult(
        trace_square, gap, bool(margin >= -zero_tol * scale), int(zero.sum()), margin
    )


def euler_logdet_expansion(F, h: float):
    """``(ln|det(I + hF)|, h tr F - h^2 tr(F^2) / 2)``."""
    F = np.asarray(F, dtype=float)
    sign, logdet = np.linalg.slogdet(np.eye(F.shape[0]) + h * F)
    if sign == 0 or not np.isfinite(logdet):
        raise ContractError(f"I + hF is singular at h={h!r}")
    second = h * np.trace(F) - 0.5 * h * h * np.trace(F @ F)
    return float(logdet), float(second)


# -- tableau-level summary --------------------------------------------------


def prop6_sampled_3d(
    tableau: ButcherTableau, h: float, n_samples: int = 1000, seed: int = 0
) -> float:
    """Largest ``det R(hF)`` over random traceless 3x3 ``F`` with ``||F||_2 = 1``.

    A sampled check of the three-dimensional extension of the criterion.
    """
    rng = np.random.default_rng(seed)
    form = rational_form(tableau)
    worst = -np.inf
    for _ in range(n_samples):
        F = rng.standard_normal((3, 3))
        F -= np.trace(F) / 3.0 * np.eye(3)
        F /= np.linalg.norm(F, 2)
        lam = h * np.linalg.eigvals(F)
        det = np.prod(_peval(form.P, lam) / _peval(form.Q, lam))
        worst = max(worst, float(det.real))
    return worst


def analyze_tableau(
    tableau: ButcherTableau, u_max: float = 1.9, n_samples: int = 2000
) -> StabilityReport:
    """Series report plus criterion verdict, product scan and symplecticity."""
    from .steppers import is_symplectic

    report = stability_series(tableau)
    report.prop6_verdict = prop6_criterion(report)
    scan = lemma5_scan(tableau, u_max, n_samples)
    report.lemma5 = scan
    report.lemma5_ustar = scan.u_star
    report.symplectic = is_symplectic(tableau, tol=1e-12)
    return report
