"""Constant weight matrices ``s_ij`` distributing the divergence over pieces."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

WEIGHT_SUM_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """``s_ij`` with ``s_ij + s_ji >= 0`` and ``sum s_ij = 1``."""

    entries: np.ndarray
    scheme: str = "custom"

    def __post_init__(self):
        s = np.array(self.entries, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ContractError("weight matrix must be square")
        if np.any(s + s.T < -WEIGHT_SUM_TOL):
            raise ContractError("weights violate s_ij + s_ji >= 0")
        if abs(s.sum() - 1.0) > WEIGHT_SUM_TOL * s.size:
            raise ContractError(f"weights sum to {s.sum()!r}, not 1")
        s.setflags(write=False)
        object.__setattr__(self, "entries", s)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)


_PAIR = re.compile(r"^pair\(\s*(\d+)\s*,\s*(\d+)\s*\)$")


def parse_scheme(scheme):
    """``"pair(1,2)"`` -> ``("pair", (0, 1))``; other labels pass through."""
    if isinstance(scheme, tuple):
        return scheme
    text = str(scheme).strip()
    match = _PAIR.match(text)
    if match:
        i, j = int(match.group(1)) - 1, int(match.group(2)) - 1
        return ("pair", (i, j))
    return (text, None)


def weight_scheme(n: int, scheme) -> WeightMatrix:
    """Standard weight choices.

    ``offdiag-uniform``: ``1/(n(n-1))`` off the diagonal.
    ``diag-1overn``: ``1/n`` on the diagonal.
    ``pair(i,j)``: ``s_ij = s_ji = 1/2`` with 1-based indices.
    """
    kind, idx = parse_scheme(scheme)
    s = np.zeros((n, n))
    if kind == "offdiag-uniform":
        if n < 2:
            raise ContractError("offdiag-uniform needs n >= 2")
        s[:] = 1.0 / (n * (n - 1))
        np.fill_diagonal(s, 0.0)
        label = kind
    elif kind == "diag-1overn":
        np.fill_diagonal(s, 1.0 / n)
        label = kind
    elif kind == "pair":
        i, j = idx
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ContractError(f"invalid pair indices ({i + 1},{j + 1}) for n={n}")
        s[i, j] = s[j, i] = 0.5
        label = f"pair({i + 1},{j + 1})"
    else:
        raise ContractError(f"unknown weight scheme {scheme!r}")
    return WeightMatrix(s, label)
