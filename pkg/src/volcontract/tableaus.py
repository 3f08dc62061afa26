"""Butcher tableaux, a registry of standard methods and a plain-text loader.

Tableau file format
-------------------
One ``key = value`` pair per line, ``#`` starts a comment::

    name = gauss2
    s = 2
    a = 1/4, 1/4 - sqrt(3)/6 ; 1/4 + sqrt(3)/6, 1/4
    b = 1/2, 1/2
    c = 1/2 - sqrt(3)/6, 1/2 + sqrt(3)/6      # optional

Rows of ``a`` are separated by ``;`` and entries by ``,``. Entries are
rationals (``1/6``, ``-2``), decimals, or arithmetic expressions using
``sqrt``. When every entry of ``a`` and ``b`` is rational the tableau keeps
exact :class:`fractions.Fraction` copies for series arithmetic.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ContractError

CONSISTENCY_TOL = 1e-14
ROW_SUM_TOL = 1e-14


def _as_fraction(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return None


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients ``a`` (s x s), weights ``b`` and abscissae ``c``.

    ``h_star`` is an empirical contraction step bound scaled by the Lipschitz
    bound: the method is expected to keep ``|det A| <= 1`` on 2D weakly
    contractive fields with ``||F||_2 <= L`` for ``h < h_star / L``. It is
    ``None`` for methods that are not contractive in two dimensions.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "tableau"
    exact_a: Optional[tuple] = field(default=None, repr=False)
    exact_b: Optional[tuple] = field(default=None, repr=False)
    h_star: Optional[float] = None

    @property
    def s(self) -> int:
        return len(self.b)

    @property
    def is_explicit(self) -> bool:
        return bool(np.all(np.triu(self.a) == 0.0))

    @property
    def is_exact(self) -> bool:
        return self.exact_a is not None and self.exact_b is not None

    def __repr__(self):
        return f"ButcherTableau(name={self.name!r}, s={self.s})"


def make_tableau(a, b, c=None, name="tableau", h_star=None) -> ButcherTableau:
    """Validate coefficients and build a :class:`ButcherTableau`.

    Entries given as ``Fraction`` or ``int`` are kept exactly as well.
    """
    a_rows = [list(row) for row in a]
    b_list = list(b)
    s = len(b_list)
    if s < 1 or len(a_rows) != s or any(len(row) != s for row in a_rows):
        raise ContractError(f"tableau {name!r}: a must be {s}x{s} to match b")

    exact_a = [[_as_fraction(v) for v in row] for row in a_rows]
    exact_b = [_as_fraction(v) for v in b_list]
    rational = all(v is not None for row in exact_a for v in row) and all(
        v is not None for v in exact_b
    )

    a_arr = np.array([[float(v) for v in row] for row in a_rows])
    b_arr = np.array([float(v) for v in b_list])
    row_sums = a_arr.sum(axis=1)
    if c is None:
        c_arr = row_sums.copy()
    else:
        c_arr = np.array([float(v) for v in c])
        if c_arr.shape != (s,):
            raise ContractError(f"tableau {name!r}: c has wrong length")
        if np.max(np.abs(c_arr - row_sums)) > ROW_SUM_TOL * max(1.0, np.max(np.abs(c_arr))) * 10:
            raise ContractError(f"tableau {name!r}: c is not the row sum of a")

    if rational:
        if sum(exact_b) != 1:
            raise ContractError(f"tableau {name!r}: weights sum to {sum(exact_b)}, not 1")
    elif abs(b_arr.sum() - 1.0) > CONSISTENCY_TOL * 10:
        raise ContractError(f"tableau {name!r}: weights sum to {b_arr.sum()!r}, not 1")

    for arr in (a_arr, b_arr, c_arr):
        arr.setflags(write=False)
    return ButcherTableau(
        a_arr,
        b_arr,
        c_arr,
        name=name,
        exact_a=tuple(tuple(row) for row in exact_a) if rational else None,
        exact_b=tuple(exact_b) if rational else None,
        h_star=h_star,
    )


def _gauss2():
    r = math.sqrt(3.0) / 6.0
    return make_tableau(
        [[0.25, 0.25 - r], [0.25 + r, 0.25]],
        [0.5, 0.5],
        [0.5 - r, 0.5 + r],
        name="gauss2",
        h_star=1.0,
    )


F = Fraction
_REGISTRY = {
    "euler": lambda: make_tableau([[0]], [1], name="euler"),
    "midpoint": lambda: make_tableau([[F(1, 2)]], [1], name="midpoint", h_star=2.0),
    "gauss1": lambda: make_tableau([[F(1, 2)]], [1], name="gauss1", h_star=2.0),
    "gauss2": _gauss2,
    "heun": lambda: make_tableau([[0, 0], [1, 0]], [F(1, 2), F(1, 2)], name="heun"),
    "rk3": lambda: make_tableau(
        [[0, 0, 0], [F(1, 2), 0, 0], [-1, 2, 0]],
        [F(1, 6), F(2, 3), F(1, 6)],
        name="rk3",
    ),
    "rk4": lambda: make_tableau(
        [[0, 0, 0, 0], [F(1, 2), 0, 0, 0], [0, F(1, 2), 0, 0], [0, 0, 1, 0]],
        [F(1, 6), F(1, 3), F(1, 3), F(1, 6)],
        name="rk4",
    ),
}


def tableau_registry(name: str) -> ButcherTableau:
    """Return a standard tableau by name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ContractError(
            f"unknown tableau {name!r}; known: {', '.join(sorted(_REGISTRY))}"
        ) from None


def tableau_names():
    return tuple(_REGISTRY)


# -- text format ------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}


def _eval_node(node):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        if isinstance(node.value, int):
            return Fraction(node.value)
        return node.value
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        value = _eval_node(node.operand)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        left, right = _eval_node(node.left), _eval_node(node.right)
        if isinstance(node.op, ast.Pow) and isinstance(left, Fraction):
            if isinstance(right, Fraction) and right.denominator == 1:
                return left ** int(right)
            left = float(left)
        return _BINOPS[type(node.op)](left, right)
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id == "sqrt"
        and len(node.args) == 1
    ):
        return math.sqrt(float(_eval_node(node.args[0])))
    raise ContractError(f"unsupported expression in tableau entry: {ast.dump(node)}")


def parse_entry(text: str):
    """Evaluate one coefficient; rationals stay exact."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ContractError(f"malformed tableau entry {text!r}") from exc
    value = _eval_node(tree)
    if isinstance(value, Fraction) or isinstance(value, float):
        return value
    return float(value)


def _parse_vector(text):
    return [parse_entry(item) for item in text.split(",") if item.strip()]


def parse_tableau(text: str, default_name="tableau") -> ButcherTableau:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key.lower()] = value
    missing = {"a", "b"} - set(fields)
    if missing:
        raise ContractError(f"tableau is missing {', '.join(sorted(missing))}")
    a = [_parse_vector(row) for row in fields["a"].split(";") if row.strip()]
    b = _parse_vector(fields["b"])
    c = _parse_vector(fields["c"]) if "c" in fields else None
    if "s" in fields and int(fields["s"]) != len(b):
        raise ContractError(f"s = {fields['s']} but b has {len(b)} entries")
    h_star = float(fields["h_star"]) if "h_star" in fields else None
    return make_tableau(a, b, c, name=fields.get("name", default_name), h_star=h_star)


def load_tableau(path) -> ButcherTableau:
    path = Path(path)
    return parse_tableau(path.read_text(), default_name=path.stem)


def format_tableau(tableau: ButcherTableau) -> str:
    """Render a tableau in the text format understood by :func:`parse_tableau`."""

    def fmt(exact, value):
        return str(exact) if exact is not None else repr(float(value))

    ea = tableau.exact_a or [[None] * tableau.s] * tableau.s
    eb = tableau.exact_b or [None] * tableau.s
    rows = " ; ".join(
        ", ".join(fmt(ea[i][j], tableau.a[i, j]) for j in range(tableau.s))
        for i in range(tableau.s)
    )
    lines = [
        f"name = {tableau.name}",
        f"s = {tableau.s}",
        f"a = {rows}",
        "b = " + ", ".join(fmt(eb[i], tableau.b[i]) for i in range(tableau.s)),
    ]
    if tableau.h_star is not None:
        lines.append(f"h_star = {tableau.h_star!r}")
    return "\n".join(lines) + "\n"


def resolve_tableau(name_or_path) -> ButcherTableau:
    """Registry name, or a path to a tableau file."""
    if isinstance(name_or_path, ButcherTableau):
        return name_or_path
    if str(name_or_path) in _REGISTRY:
        return tableau_registry(str(name_or_path))
    path = Path(name_or_path)
    if path.is_file():
        return load_tableau(path)
    raise ContractError(f"no tableau named {name_or_path!r} and no such file")
