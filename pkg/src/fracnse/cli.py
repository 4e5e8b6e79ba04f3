"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 run aborted by the blow-up
guard, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import fields

import numpy as np

from . import audits
from . import exponents as ex
from .balance import (
    CONSISTENT,
    LITERAL,
    BalanceParams,
    DiagnosticsRecorder,
    fit_gronwall_constant,
    diagnostics_row,
    scaling_audit,
    scaling_audit_numeric,
)
from .config import ConfigError, load_config
from .dynamics import run
from .geometry import CoherenceParams, alpha_integral, direction_field, rho_gamma_field
from .persist import (
    SnapshotError,
    SnapshotMeta,
    format_float,
    read_snapshot,
    write_diagnostics,
    write_snapshot,
    write_table,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABORT = 2
EXIT_VERIFY = 3

log = logging.getLogger("fracnse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Parser that reports usage errors through ``UsageError`` instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _fmt(x) -> str:
    return format_float(x) if isinstance(x, (float, np.floating)) else str(x)


# --------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    recorder = DiagnosticsRecorder(cfg.grid, cfg.balance, cfg.coherence)
    count = [0]

    def snapshot(state) -> None:
        path = os.path.join(out, f"omega_{count[0]:05d}.fnsv")
        write_snapshot(path, state.vorticity(), SnapshotMeta(cfg.grid, cfg.sim.beta, state.t))
        count[0] += 1

    summary = run(cfg.sim, cfg.ic, cfg.grid, on_diagnostics=recorder,
                  on_snapshot=snapshot if cfg.write_snapshots else None)
    write_diagnostics(recorder.rows, os.path.join(out, "diagnostics.csv"))
    for f in fields(summary):
        print(f"{f.name} = {_fmt(getattr(summary, f.name))}")
    if summary.aborted:
        _err(f"run aborted: {summary.message}")
        return EXIT_ABORT
    return EXIT_OK


# --------------------------------------------------------------------------
# diagnose and scale-audit share the balance options


def _add_balance_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p", type=float, help="Lebesgue exponent (default 6/beta)")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--p1", type=float, help="default: solved from the scaling constraint")
    p.add_argument("--variant", choices=(LITERAL, CONSISTENT), default=CONSISTENT)
    p.add_argument("--q", type=float, default=math.inf, help="time exponent for the criterion margin")
    p.add_argument("--r-max", type=float)
    p.add_argument("--eps-mag", type=float)


def _balance_from(args, beta: float) -> tuple[BalanceParams, CoherenceParams]:
    p = args.p if args.p is not None else 6.0 / beta
    p1 = args.p1 if args.p1 is not None else BalanceParams.solve_p1(args.gamma, args.a, beta, args.variant)
    params = BalanceParams(p=p, gamma=args.gamma, a=args.a, p1=p1, beta=beta,
                           variant=args.variant, chen_q=args.q)
    coherence = CoherenceParams(gamma=args.gamma, eps_mag=args.eps_mag, r_max=args.r_max)
    return params, coherence


def _load_vorticity(path: str):
    field, meta = read_snapshot(path)
    if field.ndim != 4:
        raise SnapshotError(f"{path}: expected a vector field, got a scalar snapshot")
    return field, meta


def cmd_diagnose(args) -> int:
    loaded = sorted((_load_vorticity(p) for p in args.snapshots), key=lambda fm: fm[1].time)
    rows = []
    for i, (omega, meta) in enumerate(loaded):
        params, coherence = _balance_from(args, meta.beta)
        row = diagnostics_row(omega, meta.grid, meta.time, params, coherence)
        if rows:
            prev = rows[-1]
            row.hybrid_cum = prev.hybrid_cum + 0.5 * (row.t - prev.t) * (prev.hybrid + row.hybrid)
        rows.append(row)
        row.gronwall_fit_c = fit_gronwall_constant(rows, params.p)
        if args.fields_dir:
            os.makedirs(args.fields_dir, exist_ok=True)
            xi = direction_field(omega, meta.grid, coherence.eps_mag)
            rho = rho_gamma_field(xi, coherence)
            alpha = alpha_integral(omega, xi, coherence)
            for name, data in (("xi", xi.xi), ("rho", rho), ("alpha", alpha)):
                write_snapshot(os.path.join(args.fields_dir, f"{name}_{i:05d}.fnsv"), data, meta)
    write_diagnostics(rows, args.csv if args.csv else sys.stdout)
    return EXIT_OK


def cmd_scale_audit(args) -> int:
    omega, meta = _load_vorticity(args.snapshot)
    params, coherence = _balance_from(args, meta.beta)
    audit = scaling_audit_numeric(omega, meta.grid, args.lam, params, coherence)
    print(f"lambda = {audit.lam}")
    print(f"functional_base = {_fmt(audit.value_base)}")
    print(f"functional_rescaled = {_fmt(audit.value_rescaled)}")
    print(f"observed_exponent = {_fmt(audit.observed_exponent)}")
    print(f"symbolic_exponent = {_fmt(audit.symbolic_exponent)}")
    print(f"relative_error = {_fmt(audit.relative_error)}")
    print(f"net_exponent_with_time = {_fmt(scaling_audit(params))}")
    print(f"constraint_residual_{params.variant} = {_fmt(params.constraint_residual())}")
    return EXIT_OK


# --------------------------------------------------------------------------
# exponents


def _print_vector(v: ex.ExponentVector, cs: ex.ConstraintSet) -> None:
    for name in ex.NAMES:
        print(f"{name} = {_fmt(getattr(v, name))}")
    for i, r in enumerate(ex.residuals(v, cs), start=1):
        print(f"residual_E{i} = {_fmt(float(r))}")
    failed = ex.failed_flags(v, float(cs.beta))
    print("validity = " + ("ok" if not failed else "violated: " + "; ".join(failed)))


def cmd_exponents(args) -> int:
    if args.sweep:
        betas = args.betas or [args.beta]
        ps = args.ps or [args.p]
        p1s = args.p1s or [args.p1]
        if None in betas or None in ps or None in p1s:
            raise ValueError("sweep needs --beta/--betas, --p/--ps and --p1/--p1s")
        grid = [{"p": p, "p1": p1} for p in ps for p1 in p1s]
        rows = ex.sweep(args.variant, betas, grid)
        write_table(rows, args.csv if args.csv else sys.stdout)
        return EXIT_OK
    if args.beta is None:
        raise ValueError("--beta is required")
    cs = ex.ConstraintSet(args.beta, args.variant)
    if args.p is not None or args.p1 is not None:
        if args.p is None or args.p1 is None:
            raise ValueError("--p and --p1 must be given together")
        free = {"p": args.p, "p1": args.p1}
        if args.s is not None:
            free["s"] = args.s
        result = ex.solve_family(free, cs)
        print(f"variant = {cs.variant}")
        print(f"beta = {_fmt(float(cs.beta))}")
        if isinstance(result, ex.Infeasible):
            print("status = infeasible")
            print(f"reason = {result.reason}")
            cert = result.certificate
            print(f"certificate_min_max_residual = {_fmt(cert.min_max_residual)}")
            print(f"certificate_starts = {cert.starts} (seeds {cert.seeds[0]}-{cert.seeds[1]})")
        else:
            print("status = solved")
            _print_vector(result, cs)
    if args.rank_audit:
        report = ex.rank_audit(cs, args.samples)
        print(f"rank_audit = {report.summary()}")
    return EXIT_OK


# --------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    results = audits.run_all()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracnse", description="Fractional Navier-Stokes solver and diagnostics")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run a simulation from a config file")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="diagnostics rows for vorticity snapshots")
    p.add_argument("snapshots", nargs="+")
    p.add_argument("--csv", help="write the table here instead of standard output")
    p.add_argument("--fields-dir", help="also write xi, rho_gamma and alpha fields as snapshots")
    _add_balance_options(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("exponents", help="solve or audit the exponent system")
    p.add_argument("--beta", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--p1", type=float)
    p.add_argument("--s", type=float, help="third free parameter (default: admissible midpoint)")
    p.add_argument("--variant", choices=ex.VARIANTS, default=ex.CONSISTENT)
    p.add_argument("--rank-audit", action="store_true")
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--sweep", action="store_true")
    p.add_argument("--betas", type=float, nargs="+")
    p.add_argument("--ps", type=float, nargs="+")
    p.add_argument("--p1s", type=float, nargs="+")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_exponents)

    p = sub.add_parser("scale-audit", help="observed vs symbolic scaling exponent of a snapshot")
    p.add_argument("snapshot")
    p.add_argument("--lam", type=int, default=2)
    _add_balance_options(p)
    p.set_defaults(func=cmd_scale_audit)

    p = sub.add_parser("verify", help="run the built-in property audits")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _err(str(exc))
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _err("invalid configuration:\n" + str(exc))
        return EXIT_INVALID
    except (SnapshotError, OSError, ValueError) as exc:
        _err(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
