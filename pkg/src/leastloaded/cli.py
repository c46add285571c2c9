"""Command-line interface: curve exports, sweeps, simulation, self-test.

One binary with subcommands; all output is CSV (to ``--out`` or stdout),
solver diagnostics go to stderr.  Exit codes: 0 success, 2 invalid
configuration, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import analytic_exp as ax
from .analytic_exp import ModelParams
from .curves import CcdfCurve, kolmogorov_distance
from .jobsize import (
    Deterministic,
    DetPlusPH,
    Exponential,
    JobSizeLaw,
    NoPhaseTypeError,
    as_ph,
    fit_hyperexp,
    HexpFitSpec,
    parse_law,
)
from .ph_ode import (
    mean_response_from_workload,
    solve_det,
    solve_det_plus_ph,
    solve_ph,
)
from .simulator import SimConfig, run_replicated
from .sq_cavity import solve_sq_cavity
from .workload_solvers import evolve_transient, response_ccdf, solve_stationary

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOCONV = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _load_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"bad config line (expected key=value): {line!r}")
            key, val = line.split("=", 1)
            out[key.strip().replace("_", "-")] = val.strip()
    return out


def _apply_config(subparser: argparse.ArgumentParser, path: str) -> None:
    """Install config values as the subparser's defaults (flags still win)."""
    conf = _load_config(path)
    defaults = {}
    for key, val in conf.items():
        dest = "lam" if key == "lambda" else key.replace("-", "_")
        action = next((a for a in subparser._actions if a.dest == dest), None)
        if action is None:
            raise CliError(f"unknown config key {key!r}")
        defaults[dest] = action.type(val) if action.type is not None else val
    subparser.set_defaults(**defaults)


def _parse_lambda_grid(text: str) -> np.ndarray:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError("lambda grid must be 'start:stop:count' or a comma list")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(start, stop, count)
    return np.array([float(x) for x in text.split(",")])


def _law_from(args) -> JobSizeLaw:
    try:
        return parse_law(args.law)
    except ValueError as exc:
        raise CliError(f"bad --law: {exc}") from exc


def _params(lam: float, d: int, law: JobSizeLaw) -> ModelParams:
    rho = lam * law.mean()
    if rho >= 1.0:
        raise CliError(f"rho >= 1 (lam*E[G] = {rho:.6g})")
    try:
        return ModelParams(lam=lam, d=d, rho=rho)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _open_out(args):
    if getattr(args, "out", None):
        return open(args.out, "w"), True
    return sys.stdout, False


def _workload_curve(law, p, args) -> CcdfCurve:
    method = args.method
    if method == "closed":
        if not isinstance(law, Exponential) or law.rate != 1.0:
            raise CliError("--method closed needs exp(rate=1)")
        smax = args.smax if args.smax else 40.0
        grid = np.arange(int(round(smax / args.h)) + 1) * args.h
        return CcdfCurve(h=args.h, values=ax.ll_workload_ccdf_exp(p, grid))
    if method == "fp":
        curve, report = solve_stationary(law, p, h=args.h, tol=args.tol, smax=args.smax or None)
        tail = report.contraction_estimates[-4:]
        print(
            f"fixed point: iterations={report.iterations} d_K={report.final_dk:.3e} "
            f"contraction~{[f'{r:.3f}' for r in tail]} modulus={report.contraction_modulus:.3f}"
            + (" (unproven regime)" if report.unproven_regime else ""),
            file=sys.stderr,
        )
        if not report.converged:
            raise CliError("fixed point did not converge", EXIT_NOCONV)
        return curve
    if method == "ode":
        smax = args.smax or None
        if isinstance(law, Deterministic):
            # solve in units of the job size, then rescale the grid back
            lam_unit = p.lam * law.c
            p_unit = ModelParams(lam=lam_unit, d=p.d, rho=lam_unit)
            unit = solve_det(p_unit, h_step=args.h / law.c, smax=smax / law.c if smax else None)
            return CcdfCurve(h=unit.h * law.c, values=unit.values)
        if isinstance(law, DetPlusPH):
            return solve_det_plus_ph(law.tau, law.ph, p, h_step=args.h, smax=smax)
        try:
            return solve_ph(as_ph(law), p, h_step=args.h, smax=smax)
        except NoPhaseTypeError as exc:
            raise CliError(f"--method ode not available: {exc}") from exc
    raise CliError(f"unknown method {method!r}")


def cmd_workload(args) -> int:
    law = _law_from(args)
    p = _params(args.lam, args.d, law)
    curve = _workload_curve(law, p, args)
    buf, close = _open_out(args)
    try:
        curve.to_csv(buf)
    finally:
        if close:
            buf.close()
    return EXIT_OK


def cmd_response(args) -> int:
    law = _law_from(args)
    p = _params(args.lam, args.d, law)
    if args.method == "closed":
        if not isinstance(law, Exponential) or law.rate != 1.0:
            raise CliError("--method closed needs exp(rate=1)")
        smax = args.smax if args.smax else 40.0
        grid = np.arange(int(round(smax / args.h)) + 1) * args.h
        curve = CcdfCurve(h=args.h, values=ax.ll_response_ccdf_exp(p, grid))
    else:
        workload = _workload_curve(law, p, args)
        curve = response_ccdf(workload, law, p.d)
    buf, close = _open_out(args)
    try:
        curve.to_csv(buf)
    finally:
        if close:
            buf.close()
    return EXIT_OK


def _sq_mean(law, p, args) -> float:
    if isinstance(law, Exponential) and law.rate == 1.0:
        return ax.sq_mean_response_exp(p)
    env, rep = solve_sq_cavity(law, p, tol=args.sq_tol)
    if not rep.converged:
        raise CliError("SQ cavity iteration did not converge", EXIT_NOCONV)
    return rep.mean_response


def _ll_mean(law, p, args) -> float:
    if isinstance(law, Exponential) and law.rate == 1.0:
        return ax.ll_mean_response(p)
    sub = argparse.Namespace(method="ode", h=args.h, smax=None, tol=1e-8)
    curve = _workload_curve(law, p, sub)
    return mean_response_from_workload(curve, law, p.d)


def cmd_ratio_sweep(args) -> int:
    law = _law_from(args)
    lams = _parse_lambda_grid(args.lambdas)
    d_list = [int(x) for x in args.d.split(",")]
    rows = []
    for d in d_list:
        for lam in lams:
            p = _params(lam, d, law)
            t_sq = _sq_mean(law, p, args)
            t_ll = _ll_mean(law, p, args)
            rows.append((lam, d, t_sq, t_ll, t_sq / t_ll))
    buf, close = _open_out(args)
    try:
        buf.write("lambda,d,T_sq,T_ll,ratio\n")
        for lam, d, t_sq, t_ll, ratio in rows:
            buf.write(f"{lam:.17g},{d},{t_sq:.17g},{t_ll:.17g},{ratio:.17g}\n")
    finally:
        if close:
            buf.close()
    return EXIT_OK


def cmd_tau_frontier(args) -> int:
    law = _law_from(args)
    try:
        ph = as_ph(law)
    except NoPhaseTypeError as exc:
        raise CliError(f"tau frontier needs a PH-representable law: {exc}") from exc
    lams = _parse_lambda_grid(args.lambdas)
    d = args.d
    rows = []
    for lam in lams:
        p = _params(lam, d, law)
        t_sq = _sq_mean(law, p, args)

        def t_ll(tau: float) -> float:
            if tau <= 0.0:
                pp = ModelParams(lam, d, rho=lam * ph.mean())
                curve = solve_ph(ph, pp, h_step=args.h)
                return mean_response_from_workload(curve, law, d)
            m = max(1, int(round(tau / args.h)))
            tau_g = m * args.h
            pp = ModelParams(lam, d, rho=lam * (tau_g + ph.mean()))
            curve = solve_det_plus_ph(tau_g, ph, pp, h_step=args.h)
            wait = float(np.trapezoid(curve.values**d, dx=curve.h))
            return wait + tau_g + ph.mean()

        if t_ll(0.0) > t_sq:
            print(f"warning: LL already above SQ at tau=0 for lambda={lam}", file=sys.stderr)
            rows.append((lam, 0.0))
            continue
        lo, hi = 0.0, (1.0 - lam * ph.mean()) / lam - 1e-9
        while hi - lo > args.tau_tol:
            mid = 0.5 * (lo + hi)
            if t_ll(mid) <= t_sq:
                lo = mid
            else:
                hi = mid
        rows.append((lam, 0.5 * (lo + hi)))
    buf, close = _open_out(args)
    try:
        buf.write("lambda,tau_max\n")
        for lam, tau in rows:
            buf.write(f"{lam:.17g},{tau:.17g}\n")
    finally:
        if close:
            buf.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    law = _law_from(args)
    if args.lam * law.mean() >= 1.0:
        raise CliError(f"rho >= 1 (lam*E[G] = {args.lam * law.mean():.6g})")
    cfg = SimConfig(
        N=args.N,
        lam=args.lam,
        d=args.d,
        policy=args.policy,
        law=law,
        overhead_tau=args.tau,
        horizon=args.horizon,
        warmup_frac=args.warmup,
        runs=args.runs,
        seed=args.seed,
    )
    summary = run_replicated(cfg)
    if summary.empirical_ccdf is None:
        raise CliError("simulation produced no samples", EXIT_NOCONV)
    overlay = None
    if args.overlay:
        p = _params(args.lam, args.d, law)
        sub = argparse.Namespace(method=args.overlay, h=cfg.grid_h, smax=summary.empirical_ccdf.smax, tol=1e-8)
        if args.overlay == "closed":
            overlay = ax.ll_response_ccdf_exp(p, summary.empirical_ccdf.s_grid)
        else:
            workload = _workload_curve(law, p, sub)
            overlay = response_ccdf(workload, law, p.d).interp(summary.empirical_ccdf.s_grid)
    buf, close = _open_out(args)
    try:
        buf.write(f"# summary mean={summary.mean_response:.17g} ci95={summary.ci_halfwidth:.17g} ")
        buf.write(f"runs={summary.runs} seed={summary.seed} jobs={summary.jobs_counted}\n")
        if overlay is None:
            buf.write("s,ccdf\n")
            for s, v in zip(summary.empirical_ccdf.s_grid, summary.empirical_ccdf.values):
                buf.write(f"{s:.17g},{v:.17g}\n")
        else:
            buf.write("s,ccdf,ccdf_limit\n")
            for s, v, w in zip(summary.empirical_ccdf.s_grid, summary.empirical_ccdf.values, overlay):
                buf.write(f"{s:.17g},{v:.17g},{w:.17g}\n")
    finally:
        if close:
            buf.close()
    return EXIT_OK


def cmd_transient(args) -> int:
    law = _law_from(args)
    if args.t_end <= 0:
        raise CliError("--t-end must be positive")
    p = _params(args.lam, args.d, law)
    stamps = tuple(float(x) for x in args.stamps.split(",")) if args.stamps else ()
    if any(t < 0 for t in stamps):
        raise CliError("stamps must be nonnegative")
    result = evolve_transient(law, p, dt=args.dt, t_end=args.t_end, record_at=stamps)
    # stationary reference for the per-stamp distance report
    if isinstance(law, Exponential) and law.rate == 1.0:
        n = result.final.f.shape[0]
        ref = CcdfCurve(h=args.dt, values=ax.ll_workload_ccdf_exp(p, np.arange(n) * args.dt))
    else:
        ref, rep = solve_stationary(law, p, h=args.dt)
        if not rep.converged:
            raise CliError("stationary reference did not converge", EXIT_NOCONV)
    buf, close = _open_out(args)
    try:
        buf.write("t,s,ccdf\n")
        for t, curve in result.snapshots:
            print(f"t={t:g} d_K_to_stationary={kolmogorov_distance(curve, ref):.6e}", file=sys.stderr)
            for s, v in zip(curve.s_grid, curve.values):
                buf.write(f"{t:.17g},{s:.17g},{v:.17g}\n")
    finally:
        if close:
            buf.close()
    return EXIT_OK


def cmd_selftest(args) -> int:
    """Cross-method oracle matrix; nonzero exit on any tolerance breach."""
    failures = 0

    def check(name: str, value: float, tol: float):
        nonlocal failures
        ok = value <= tol
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")

    law = Exponential(1.0)
    p = ModelParams(0.9, 2)
    curve, rep = solve_stationary(law, p, h=1e-3)
    grid = curve.s_grid
    closed = CcdfCurve(h=curve.h, values=ax.ll_workload_ccdf_exp(p, grid))
    check("exp fp vs closed", kolmogorov_distance(curve, closed), 1e-4)
    ode = solve_ph(as_ph(law), p, h_step=1e-3)
    check("exp ode vs closed", kolmogorov_distance(ode, closed), 1e-8)
    resp = response_ccdf(curve, law, 2)
    closed_r = ax.ll_response_ccdf_exp(p, resp.s_grid)
    check("exp response conv vs closed", float(np.abs(resp.values - closed_r).max()), 1e-4)

    hx = fit_hyperexp(HexpFitSpec(scv=4, f=0.5))
    ph = _params(0.7, 2, hx)
    fp_h, _ = solve_stationary(hx, ph, h=1e-3)
    ode_h = solve_ph(as_ph(hx), ph, h_step=1e-3)
    check("hexp fp vs ode", kolmogorov_distance(fp_h, ode_h), 1e-3)

    det = Deterministic(1.0)
    pd = ModelParams(0.9, 2)
    fp_d, _ = solve_stationary(det, pd, h=1e-3)
    dde = solve_det(pd, h_step=1e-3)
    check("det fp vs dde", kolmogorov_distance(fp_d, dde), 1e-3)

    env, repsq = solve_sq_cavity(law, p)
    check("sq cavity vs series", abs(repsq.mean_response - ax.sq_mean_response_exp(p)), 1e-6)

    cfg = SimConfig(N=200, lam=0.8, d=2, policy="LL", law=law, horizon=5e3, runs=4, seed=0)
    summary = run_replicated(cfg)
    target = ax.ll_mean_response(ModelParams(0.8, 2))
    check("sim mean vs analytic (loose)", abs(summary.mean_response - target), 0.05)

    print("selftest:", "OK" if failures == 0 else f"{failures} failure(s)")
    return EXIT_OK if failures == 0 else 1


def _add_common(sp, *, law=True, model=True):
    sp.add_argument("--config", help="flat key=value file supplying defaults")
    if law:
        sp.add_argument("--law", default="exp(rate=1)", help="job-size law spec, e.g. hexp(scv=20,f=0.5)")
    if model:
        sp.add_argument("--lambda", dest="lam", type=float, default=0.9, help="arrival rate per server")
        sp.add_argument("--d", type=int, default=2, help="number of sampled servers")
    sp.add_argument("--out", help="output CSV path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leastloaded", description=__doc__)
    parser._command_parsers = {}  # type: ignore[attr-defined]
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        sp = sub.add_parser(name, **kw)
        parser._command_parsers[name] = sp  # type: ignore[attr-defined]
        return sp

    sp = add_parser("workload", help="stationary workload ccdf curve")
    _add_common(sp)
    sp.add_argument("--method", choices=("closed", "fp", "ode"), default="fp")
    sp.add_argument("--h", type=float, default=1e-3, help="grid step")
    sp.add_argument("--tol", type=float, default=1e-8, help="fixed-point tolerance")
    sp.add_argument("--smax", type=float, default=0.0, help="truncation point (0 = auto)")
    sp.set_defaults(func=cmd_workload)

    sp = add_parser("response", help="stationary response-time ccdf curve")
    _add_common(sp)
    sp.add_argument("--method", choices=("closed", "fp", "ode"), default="fp")
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--smax", type=float, default=0.0)
    sp.set_defaults(func=cmd_response)

    sp = add_parser("ratio-sweep", help="SQ/LL mean response ratio table")
    _add_common(sp, model=False)
    sp.add_argument("--lambdas", default="0.1:0.9:9", help="grid 'a:b:n' or comma list")
    sp.add_argument("--d", default="2", help="comma list of d values")
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--sq-tol", type=float, default=1e-10)
    sp.set_defaults(func=cmd_ratio_sweep)

    sp = add_parser("tau-frontier", help="largest tolerable late-binding overhead per lambda")
    _add_common(sp, model=False)
    sp.add_argument("--lambdas", default="0.1:0.9:9")
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--h", type=float, default=2e-3)
    sp.add_argument("--tau-tol", type=float, default=1e-4)
    sp.add_argument("--sq-tol", type=float, default=1e-10)
    sp.set_defaults(func=cmd_tau_frontier)

    sp = add_parser("simulate", help="finite-N simulation with empirical response ccdf")
    _add_common(sp)
    sp.add_argument("--policy", choices=("LL", "SQ"), default="LL")
    sp.add_argument("--N", type=int, default=100)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--horizon", type=float, default=None, help="default 1e7/N")
    sp.add_argument("--warmup", type=float, default=0.30)
    sp.add_argument("--tau", type=float, default=0.0, help="late-binding overhead added under LL")
    sp.add_argument("--overlay", choices=("closed", "ode", "fp"), default=None,
                    help="add the limiting response ccdf as a column")
    sp.set_defaults(func=cmd_simulate)

    sp = add_parser("transient", help="workload ccdf trajectory from the empty system")
    _add_common(sp)
    sp.add_argument("--dt", type=float, default=1e-3, help="time step == grid step")
    sp.add_argument("--t-end", type=float, default=50.0)
    sp.add_argument("--stamps", default="", help="comma list of snapshot times")
    sp.set_defaults(func=cmd_transient)

    sp = add_parser("selftest", help="cross-method oracle matrix")
    sp.add_argument("--config", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            # reparse with config values as defaults so flags keep priority
            _apply_config(parser._command_parsers[args.command], args.config)
            args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
