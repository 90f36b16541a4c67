"""Command-line front end.

``spoc validate|solve|bounds|generate|sweep-suite``.  Exit codes: 0 success,
1 validation failure, 2 parse or usage error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .bounds import CSV_COLUMNS, SweepOptions, sweep
from .dual_model import DualProblem
from .generator import GenConfig, generate, write_problems
from .ode_eval import IntegratorConfig
from .problem_model import ParseError, SpocProblem, load_problem, validate
from .reduction import reduce
from .transcription import (build_mesh, extract_costate, problem_mesh, solve, transcribe_dual,
                            transcribe_primal, transcribe_reduced)

log = logging.getLogger("spoc")

FIXTURES = ("example1", "example2")
DEFAULT_EPS = "1e-1,1e-2,1e-3,1e-4,1e-5"


class UsageError(Exception):
    pass


def load(source: str) -> SpocProblem:
    """A problem from a file path or a built-in fixture name."""
    if source in FIXTURES and not Path(source).exists():
        text = resources.files("spoc.fixtures").joinpath(f"{source}.json").read_text()
        return load_problem(text, name=source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc}") from None
    return load_problem(text, name=path.stem)


def parse_eps(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise UsageError(f"bad eps list {text!r}") from None
    if not vals:
        raise UsageError("eps list is empty")
    if any(not v > 0 for v in vals):
        raise UsageError("eps must be positive")
    return vals


def _integrator(args) -> IntegratorConfig:
    return IntegratorConfig(rel_tol=args.tol_ode_rel, abs_tol=args.tol_ode_abs)


def _options(args) -> SweepOptions:
    return SweepOptions(solve_primal=args.solve_primal, solve_dual=args.solve_dual,
                        nodes=args.nodes, tol_solve=args.tol_solve,
                        extrapolate=args.extrapolate, integrator=_integrator(args))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    p = load(args.problem)
    report = validate(p)
    print(report.format())
    return 0 if report.ok else 1


def _check_valid(p: SpocProblem) -> None:
    report = validate(p)
    if not report.ok:
        print(report.format(), file=sys.stderr)
        raise SystemExit(1)


def cmd_solve(args) -> int:
    p = load(args.problem)
    _check_valid(p)
    if args.which == "reduced":
        res = solve(transcribe_reduced(reduce(p), build_mesh(p.T, 0.0, args.nodes)),
                    tol=args.tol_solve)
        eps = 0.0
    else:
        if args.eps is None:
            raise UsageError(f"solve {args.which} needs --eps")
        eps = parse_eps(args.eps)
        if len(eps) != 1:
            raise UsageError("solve takes a single eps")
        eps = eps[0]
        if eps > p.eps_star:
            log.warning("eps=%g exceeds eps_star=%g", eps, p.eps_star)
        mesh = problem_mesh(p, eps, args.nodes)
        prog = (transcribe_dual(DualProblem(p), eps, mesh) if args.which == "dual"
                else transcribe_primal(p, eps, mesh))
        res = solve(prog, tol=args.tol_solve)
    traj = res.trajectory
    if args.which != "dual" and res.program is not None:
        traj = traj.with_channels(chi=extract_costate(res))
    out = Path(args.out) / f"{p.name}_{args.which}.csv"
    _write(out, traj.to_csv())
    print(f"{p.name} {args.which} eps={eps:.6g} V={res.objective:.12g} status={res.status} "
          f"stationarity={res.stationarity:.3e} feasibility={res.feasibility:.3e} "
          f"iterations={res.iterations} time={res.wall_time:.3f}s -> {out}")
    return 0 if res.converged else 3


def cmd_bounds(args) -> int:
    eps = parse_eps(args.eps)
    p = load(args.problem)
    _check_valid(p)
    try:
        report = sweep(p, eps, _options(args))
    except RuntimeError as exc:  # the reduced solve failed; no row can be built
        print(f"reduced solve failed: {exc}", file=sys.stderr)
        return 3
    out = Path(args.out) / f"{p.name}_bounds.csv"
    _write(out, report.to_csv())
    fmt = lambda v, f: "n/a" if v is None else format(v, f)
    print(f"{p.name}: V_reduced={report.V_reduced:.12g} C={fmt(report.C, '.6g')} "
          f"gap/eps={fmt(report.C_raw, '.6g')} slope={fmt(report.slope, '.4f')} -> {out}")
    for r in report.rows:
        print(f"  eps={r.eps:<8.3g} chi_u={fmt(r.chi_upper, '.12g')} chi_l={fmt(r.chi_lower, '.12g')} "
              f"gap={fmt(r.gap, '.4e')} {r.status}")
    return 0 if any(r.gap is not None for r in report.rows) else 3


def cmd_generate(args) -> int:
    try:
        cfg = GenConfig(m=args.m, n=args.n, k=args.k, T=args.T, seed=args.seed, count=args.count,
                        delta=args.delta, cond_cap=args.cond_cap, prefix=args.prefix)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    for path in write_problems(generate(cfg), args.out):
        print(path)
    return 0


def _suite_job(path: str, eps, opts: SweepOptions):
    try:
        p = load(path)
        if not validate(p).ok:
            return path, None, "validation failed"
        return path, sweep(p, eps, opts), None
    except Exception as exc:  # reported as a skip
        return path, None, f"{type(exc).__name__}: {exc}"


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return statistics.fmean(xs) if xs else None


def _ratio(a, b):
    return None if a is None or b is None or b == 0 else a / b


def cmd_sweep_suite(args) -> int:
    eps = parse_eps(args.eps)
    files = sorted(str(f) for f in Path(args.directory).glob("*.json"))
    opts = _options(args)
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_suite_job, files, [eps] * len(files), [opts] * len(files)))
    else:
        results = [_suite_job(f, eps, opts) for f in files]
    reports = []
    for path, rep, err in results:
        if rep is None:
            log.warning("skipping %s: %s", path, err)
        else:
            reports.append(rep)

    rows_csv = [",".join(CSV_COLUMNS)]
    for rep in reports:
        rows_csv += rep.to_csv().splitlines()[1:]
    out = Path(args.out)
    _write(out / "suite_rows.csv", "\n".join(rows_csv) + "\n")

    f = lambda v: "" if v is None else f"{v:.12g}"
    head = ("eps,problems,mean_t_primal_s,mean_t_dual_s,mean_t_bounds_s,gain_primal_vs_bounds,"
            "gain_dual_vs_bounds,sandwich_checked,sandwich_pass_rate")
    agg = [head]
    for e in sorted(set(eps), reverse=True):
        rows = [r for rep in reports for r in rep.rows if r.eps == e]
        tp, td, tb = (_mean([getattr(r, a) for r in rows]) for a in ("t_primal", "t_dual", "t_bounds"))
        checked = [r.sandwich_ok for r in rows if r.sandwich_ok is not None]
        rate = sum(checked) / len(checked) if checked else None
        agg.append(",".join([f(e), str(len(rows)), f(tp), f(td), f(tb), f(_ratio(tp, tb)),
                             f(_ratio(td, tb)), str(len(checked)), f(rate)]))
    _write(out / "suite_summary.csv", "\n".join(agg) + "\n")
    slopes = ["problem,slope,C,gap_over_eps"]
    slopes += [f"{rep.problem},{f(rep.slope)},{f(rep.C)},{f(rep.C_raw)}" for rep in reports]
    _write(out / "suite_slopes.csv", "\n".join(slopes) + "\n")
    print("\n".join(agg))
    good = [rep.slope for rep in reports if rep.slope is not None]
    if good:
        print(f"slope: median={statistics.median(good):.4f} min={min(good):.4f} max={max(good):.4f}")
    print(f"{len(reports)} of {len(files)} problems processed -> {out}")
    return 0


# ---------------------------------------------------------------------------

def _solver_flags(sp, eps_default=None):
    sp.add_argument("--eps", default=eps_default, help="comma-separated list")
    sp.add_argument("--nodes", type=int, default=400)
    sp.add_argument("--tol-solve", type=float, default=1e-8)
    sp.add_argument("--tol-ode-rel", type=float, default=1e-8)
    sp.add_argument("--tol-ode-abs", type=float, default=1e-10)
    sp.add_argument("--out", default=".")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spoc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check the standing assumptions")
    sp.add_argument("problem")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("solve", help="solve a transcribed problem")
    sp.add_argument("which", choices=("primal", "dual", "reduced"))
    sp.add_argument("problem")
    _solver_flags(sp)
    sp.set_defaults(func=cmd_solve)

    for name, func, target in (("bounds", cmd_bounds, "problem"),
                               ("sweep-suite", cmd_sweep_suite, "directory")):
        sp = sub.add_parser(name)
        sp.add_argument(target)
        _solver_flags(sp, DEFAULT_EPS)
        sp.add_argument("--solve-primal", action=argparse.BooleanOptionalAction, default=True)
        sp.add_argument("--solve-dual", action=argparse.BooleanOptionalAction, default=True)
        sp.add_argument("--extrapolate", action=argparse.BooleanOptionalAction, default=False,
                        help="Richardson values from meshes N and 2N")
        if name == "sweep-suite":
            sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(func=func)

    sp = sub.add_parser("generate", help="write random problem files")
    sp.add_argument("--m", type=int, default=4)
    sp.add_argument("--n", type=int, default=6)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--T", type=float, default=0.5)
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delta", type=float, default=0.5)
    sp.add_argument("--cond-cap", type=float, default=1e3)
    sp.add_argument("--prefix", default="gen")
    sp.add_argument("--out", default=".")
    sp.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # numerical failure inside a solver
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
