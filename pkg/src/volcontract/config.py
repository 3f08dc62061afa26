"""Flat ``key = value`` run configuration with command-line overrides."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError

DEFAULT_REGION = "-20,20"


@dataclass(frozen=True)
class MethodSpec:
    """Parsed method label.

    ``kind`` is a tableau name (or tableau file path), ``split``,
    ``lorenz-exact`` or ``explicit-split``.
    """

    kind: str
    scheme: Optional[str] = None
    method2d: str = "midpoint"
    order: int = 2
    matrix: Optional[np.ndarray] = field(default=None, compare=False)
    label: str = ""


def _split_top_level(text):
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:i].strip())
            start = i + 1
    parts.append(text[start:].strip())
    return [p for p in parts if p]


def parse_matrix(text: str) -> np.ndarray:
    """``"6,0;0,-6"`` -> 2x2 array; rows separated by ``;``."""
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";")]
        M = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ContractError(f"cannot parse matrix {text!r}: {exc}") from None
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"matrix {text!r} is not square")
    return M


_CALL = re.compile(r"^([A-Za-z0-9_\-]+)\((.*)\)$", re.S)


def parse_method(text: str) -> MethodSpec:
    """Parse ``euler``, ``split(pair(1,2), midpoint, 2)``, ``lorenz-exact(1)``,
    ``explicit-split(6,0;0,-6)`` and plain tableau names or paths."""
    text = text.strip()
    match = _CALL.match(text)
    if not match:
        if text in ("split", "lorenz-exact", "explicit-split"):
            return parse_method(text + "()")
        return MethodSpec(kind=text, label=text)
    head, body = match.group(1), match.group(2).strip()
    if head == "split":
        args = _split_top_level(body)
        scheme = args[0] if args else "diag-1overn"
        method2d = args[1] if len(args) > 1 else "midpoint"
        order = _order(args[2]) if len(args) > 2 else 2
        return MethodSpec("split", scheme, method2d, order, label=text)
    if head == "lorenz-exact":
        return MethodSpec("lorenz-exact", order=_order(body) if body else 2, label=text)
    if head == "explicit-split":
        return MethodSpec("explicit-split", matrix=parse_matrix(body) if body else None, label=text)
    raise ContractError(f"unknown method {text!r}")


def _order(text):
    try:
        order = int(text)
    except ValueError:
        raise ContractError(f"composition order must be an integer, got {text!r}") from None
    if order not in (1, 2):
        raise ContractError(f"composition order must be 1 or 2, got {order}")
    return order


def parse_floats(text: str) -> Tuple[float, ...]:
    text = text.strip().strip("()[]")
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ContractError(f"expected comma-separated numbers, got {text!r}") from None


def parse_region(text: str, dim: int) -> np.ndarray:
    """``"lo,hi"`` for every axis or ``"lo1,hi1;lo2,hi2;..."`` per axis."""
    rows = [parse_floats(r) for r in text.split(";")]
    if any(len(r) != 2 for r in rows):
        raise ContractError(f"region {text!r} needs lo,hi pairs")
    if len(rows) == 1:
        rows = rows * dim
    if len(rows) != dim:
        raise ContractError(f"region has {len(rows)} axes, system has {dim}")
    box = np.array(rows, dtype=float)
    if np.any(box[:, 0] > box[:, 1]):
        raise ContractError(f"region {text!r} has lo > hi")
    return box


@dataclass(frozen=True)
class RunConfig:
    system: str = "pendulum"
    params: Tuple[float, ...] = ()
    method: str = "midpoint"
    h: float = 0.01
    n_steps: int = 100
    x0: Tuple[float, ...] = ()
    seed: int = 0
    output: Optional[str] = None
    region: str = DEFAULT_REGION
    tol: float = 1e-12
    max_iters: int = 50

    def validate(self, dim: Optional[int] = None):
        if not self.h > 0:
            raise ContractError(f"h must be positive, got {self.h}")
        if self.n_steps < 1:
            raise ContractError(f"n_steps must be at least 1, got {self.n_steps}")
        if dim is not None and len(self.x0) != dim:
            raise ContractError(f"x0 has length {len(self.x0)}, system {self.system} has dimension {dim}")
        return self


_CONVERTERS = {
    "system": str,
    "params": parse_floats,
    "method": str,
    "h": float,
    "n_steps": int,
    "x0": parse_floats,
    "seed": int,
    "output": str,
    "region": str,
    "tol": float,
    "max_iters": int,
}


def parse_config_text(text: str) -> dict:
    """Key-value pairs; ``#`` starts a comment, blank lines are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONVERTERS:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_config(text: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Config from file text, then overrides (``None`` values are ignored)."""
    raw = parse_config_text(text) if text else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    kwargs = {}
    for key, value in raw.items():
        convert = _CONVERTERS[key]
        if isinstance(value, str) or convert is str:
            try:
                kwargs[key] = convert(value)
            except ValueError:
                raise ContractError(f"bad value for {key}: {value!r}") from None
        else:
            kwargs[key] = tuple(value) if convert is parse_floats else value
    return RunConfig(**kwargs)


def format_config(config: RunConfig) -> str:
    def vec(v):
        return ",".join(f"{x:.17g}" for x in v)

    lines = [
        f"system = {config.system}",
        f"params = {vec(config.params)}",
        f"method = {config.method}",
        f"h = {config.h!r}",
        f"n_steps = {config.n_steps}",
        f"x0 = {vec(config.x0)}",
        f"seed = {config.seed}",
        f"region = {config.region}",
        f"tol = {config.tol!r}",
        f"max_iters = {config.max_iters}",
    ]
    if config.output:
        lines.append(f"output = {config.output}")
    return "\n".join(lines) + "\n"


__all__ = [
    "MethodSpec",
    "RunConfig",
    "build_config",
    "format_config",
    "parse_config_text",
    "parse_floats",
    "parse_matrix",
    "parse_method",
    "parse_region",
]
