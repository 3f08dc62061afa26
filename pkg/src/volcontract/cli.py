"""Command-line front end: ``volcontract <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input and 2 when a computation
fails. Output files are written under a ``.partial`` name and renamed once
complete; a failed run leaves only the ``.partial`` file.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import monitor
from .config import (
    DEFAULT_REGION,
    build_config,
    parse_floats,
    parse_method,
    parse_region,
)
from .errors import ContractError, IndefiniteError
from .stability import analyze_tableau
from .steppers import SolverConfig, make_stepper
from .systems import builtin
from .tableaus import resolve_tableau

OUTPUT_ENV = "VOLCONTRACT_OUTPUT_DIR"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILURE = 2


def output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


def resolve_output(path: Optional[str], default_name: str) -> Path:
    """``path`` or ``default_name``; relative paths land in the output directory."""
    target = Path(path) if path else Path(default_name)
    return target if target.is_absolute() else output_dir() / target


def slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-") or "run"


def write_atomic(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "w", newline="") as fh:
        fh.write(text)
    os.replace(partial, path)
    return path


def write_partial(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "w", newline="") as fh:
        fh.write(text)
    return partial


def build_stepper(method_text: str, system, region_text: str = DEFAULT_REGION, seed: int = 0,
                  solver: SolverConfig = SolverConfig()):
    """Step function ``(x, h) -> StepOutcome`` for any method label."""
    spec = parse_method(method_text)
    if spec.kind == "split":
        from .splitting import ComposedStepper, contractive_plan

        region = parse_region(region_text, system.dim)
        plan = contractive_plan(system, spec.scheme, region=region, seed=seed)
        return ComposedStepper(plan, spec.method2d, spec.order, solver)
    if spec.kind == "lorenz-exact":
        from .splitting import lorenz_exact_stepper

        if system.name != "lorenz":
            raise ContractError(f"lorenz-exact needs the lorenz system, got {system.name}")
        return lorenz_exact_stepper(system.params, spec.order)
    if spec.kind == "explicit-split":
        from .splitting import explicit_stepper, search_traceless_M, validate_real_spectrum

        region = parse_region(region_text, system.dim)
        if spec.matrix is None:
            M, check = search_traceless_M(system, region, seed=seed)
        else:
            M = spec.matrix
            check = validate_real_spectrum(system, M, region, seed=seed)
            if not check.ok:
                raise ContractError(
                    f"df - M has complex eigenvalues at {np.array2string(check.worst_state, precision=6)}"
                )
        return explicit_stepper(system, M, check)
    return make_stepper(spec.kind, system, solver)


# -- subcommands -------------------------------------------------------------


def cmd_integrate(args) -> int:
    text = Path(args.config).read_text() if args.config else None
    overrides = {
        "system": args.system,
        "params": args.params,
        "method": args.method,
        "h": args.h,
        "n_steps": args.n_steps,
        "x0": args.x0,
        "seed": args.seed,
        "output": args.output,
        "region": args.region,
    }
    config = build_config(text, overrides)
    system = builtin(config.system, config.params)
    config.validate(system.dim)
    solver = SolverConfig(config.tol, config.max_iters)
    stepper = build_stepper(config.method, system, config.region, config.seed, solver)
    path = resolve_output(config.output, f"{slug(config.system)}_{slug(config.method)}.csv")
    try:
        record = monitor.run(stepper, np.array(config.x0), config.h, config.n_steps, system)
    except monitor.RunAborted as exc:
        partial = write_partial(path, record_csv(exc.record))
        print(f"error: {exc}", file=sys.stderr)
        print(f"summary status=failed steps={exc.record.n_steps} partial={partial}")
        return EXIT_FAILURE
    write_atomic(path, record_csv(record))
    if args.plot:
        from .plotting import plot_trajectory

        plot_trajectory(record, path.with_suffix(".png"), f"{config.system}, {config.method}, h={config.h:g}")
    print(
        f"summary status=ok steps={record.n_steps} cum_logdet={record.cum_logdet[-1]:.17g} "
        f"violations={record.violations} output={path}"
    )
    return EXIT_OK


def record_csv(record) -> str:
    return monitor.trajectory_csv(record)


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def tableau_block(report) -> str:
    lines = [
        f"tableau={report.name}",
        f"p={report.order}",
        f"a={format_value(report.coeff_a)}",
        f"b={format_value(report.coeff_b)}",
        f"symplectic={format_value(report.symplectic)}",
        f"verdict={report.prop6_verdict.value}",
        f"lemma5={'pass' if report.lemma5.passed else 'fail'}",
        f"ustar={format_value(report.lemma5_ustar)}",
    ]
    if report.lemma5.axis:
        lines.append(f"lemma5_axis={report.lemma5.axis}")
    return "\n".join(lines) + "\n"


def cmd_analyze_tableau(args) -> int:
    blocks = []
    for name in args.tableau:
        tableau = resolve_tableau(name)
        report = analyze_tableau(tableau, u_max=args.u_max, n_samples=args.n_samples)
        blocks.append(tableau_block(report))
        if args.plot:
            from .plotting import plot_order_star

            target = output_dir() / f"order-star_{slug(tableau.name)}.png"
            target.parent.mkdir(parents=True, exist_ok=True)
            plot_order_star(tableau, target)
    text = "\n".join(blocks)
    sys.stdout.write(text)
    if args.output:
        write_atomic(resolve_output(args.output, ""), text)
    return EXIT_OK


def cmd_split_check(args) -> int:
    from .splitting import QuadratureConfig, contractive_plan, parse_manifest

    quad = None
    anchor = parse_floats(args.anchor) if args.anchor else None
    if args.manifest:
        info = parse_manifest(Path(args.manifest).read_text())
        system = builtin(info["system"], info["params"])
        scheme, layout, quad = info["scheme"], info["layout"], info["quad"]
        anchor = anchor or info["anchor"]
    else:
        system = builtin(args.system, parse_floats(args.params or ""))
        scheme, layout = args.scheme, args.layout
        quad = QuadratureConfig(args.quad_nodes)
    region = parse_region(args.region, system.dim)
    try:
        plan = contractive_plan(system, scheme, anchor, quad, layout=layout, region=region,
                                n_samples=args.n_samples, seed=args.seed)
    except IndefiniteError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        print("summary status=refused")
        return EXIT_FAILURE
    rng = np.random.default_rng(args.seed)
    states = region[:, 0] + (region[:, 1] - region[:, 0]) * rng.random((args.n_states, system.dim))
    check = plan.check(states)
    lines = [
        f"system={system.name}",
        f"scheme={plan.weights.scheme}",
        f"layout={plan.layout}",
        f"states={check.n_states}",
        f"reconstruction_residual={check.reconstruction_residual:.6e}",
        f"closure_residual={'none' if check.closure_residual is None else f'{check.closure_residual:.6e}'}",
        f"s_piece_trace_error={check.s_piece_trace_error:.6e}",
    ]
    for label, lo, hi in check.piece_divergence:
        lines.append(f"piece={label} div_min={lo:.6e} div_max={hi:.6e}")
    tol = plan.quad.tolerance
    ok = check.reconstruction_residual <= tol and all(
        hi <= tol for label, _, hi in check.piece_divergence if label.startswith("A")
    )
    lines.append(f"summary status={'ok' if ok else 'failed'} max_piece_divergence={check.max_piece_divergence:.6e}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.write_manifest:
        write_atomic(Path(args.write_manifest), plan.manifest())
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_compliance_scan(args) -> int:
    h_grid = np.geomspace(args.h_min, args.h_max, args.n_h)
    levels = parse_floats(args.trace_levels)
    report = monitor.compliance_scan(
        args.method, args.family, args.L, h_grid, levels, args.n_fields, args.seed
    )
    text = report.table()
    sys.stdout.write(text)
    path = resolve_output(args.output, f"compliance_{slug(args.method)}_{slug(args.family)}.txt")
    write_atomic(path, text)
    if args.plot:
        from .plotting import plot_compliance

        plot_compliance(report, path.with_suffix(".png"))
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volcontract",
        description="Volume-contraction checks for one-step integrators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="run a method and write the trajectory CSV")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--system")
    p.add_argument("--params", help="comma-separated system parameters")
    p.add_argument("--method", help="euler, midpoint, gauss2, rk3, split(pair(1,2),midpoint,2), ...")
    p.add_argument("--h", type=float)
    p.add_argument("--n-steps", dest="n_steps", type=int)
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--seed", type=int)
    p.add_argument("--region", help="sampling box for split and explicit-split methods")
    p.add_argument("--output", "-o")
    p.add_argument("--plot", action="store_true", help="also write a PNG next to the CSV")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("analyze-tableau", help="stability-function report for tableaux")
    p.add_argument("tableau", nargs="+", help="registered name or tableau file")
    p.add_argument("--u-max", dest="u_max", type=float, default=1.9)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=2000)
    p.add_argument("--output", "-o")
    p.add_argument("--plot", action="store_true", help="write order-star PNGs to the output directory")
    p.set_defaults(func=cmd_analyze_tableau)

    p = sub.add_parser("split-check", help="build a splitting plan and report its residuals")
    p.add_argument("--manifest", help="plan manifest file; flags fill in the rest")
    p.add_argument("--system", default="lorenz")
    p.add_argument("--params")
    p.add_argument("--scheme", default="pair(1,2)")
    p.add_argument("--layout", default="tridiagonal", choices=["tridiagonal", "full"])
    p.add_argument("--region", default=DEFAULT_REGION)
    p.add_argument("--anchor")
    p.add_argument("--quad-nodes", dest="quad_nodes", type=int, default=32)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=100)
    p.add_argument("--n-states", dest="n_states", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--write-manifest", dest="write_manifest")
    p.set_defaults(func=cmd_split_check)

    p = sub.add_parser("compliance-scan", help="largest violation-free h per trace level")
    p.add_argument("--method", default="midpoint")
    p.add_argument("--family", default="linear2d", choices=list(monitor.FAMILIES))
    p.add_argument("--L", type=float, default=10.0)
    p.add_argument("--h-min", dest="h_min", type=float, default=1e-7)
    p.add_argument("--h-max", dest="h_max", type=float, default=10.0)
    p.add_argument("--n-h", dest="n_h", type=int, default=57)
    p.add_argument("--trace-levels", dest="trace_levels", default="0,-1e-6,-1e-3,-1")
    p.add_argument("--n-fields", dest="n_fields", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_compliance_scan)
    return parser


_NEGATIVE_VALUE = re.compile(r"^-\.?\d")


def attach_negative_values(argv):
    """Rewrite ``--opt -1,2`` as ``--opt=-1,2`` so argparse accepts it."""
    out = []
    for token in argv:
        if (out and _NEGATIVE_VALUE.match(token) and out[-1].startswith("--")
                and "=" not in out[-1]):
            out[-1] = f"{out[-1]}={token}"
        else:
            out.append(token)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(attach_negative_values(argv))
    try:
        return args.func(args)
    except (ContractError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("summary status=error")
        return EXIT_INPUT
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("summary status=error")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
