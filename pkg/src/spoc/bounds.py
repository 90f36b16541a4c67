"""Upper and lower bounds on the optimal value from the reduced control.

The reduced optimal control ``ubar`` is feasible for the full problem at
every ``eps``, so evaluating the cost along its trajectory ``zhat`` gives
an upper bound.  Taking ``rho = Q zhat`` and integrating the dual
dynamics backward from ``gamma(T) = -diag(pi11, pi22) zhat(T)`` gives a
feasible dual pair whose objective is a lower bound.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dual_model import DualProblem
from .ode_eval import (BackwardSolution, ForwardSolution, IntegratorConfig, ToleranceNotMet,
                       dual_functional, integrate_dual_backward, integrate_forward,
                       primal_functional)
from .problem_model import SpocProblem, Trajectory
from .reduction import reduce
from .transcription import (build_mesh, problem_mesh, solve, transcribe_dual, transcribe_primal,
                            transcribe_reduced)

__all__ = [
    "BoundsRow",
    "BoundsReport",
    "SweepOptions",
    "DegenerateReduced",
    "upper_bound",
    "lower_bound",
    "evaluate_bounds",
    "error_constant",
    "fit_slope",
    "sweep",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("problem,eps,V_reduced,V_primal,V_dual,chi_upper,chi_lower,gap,C,violation_up,"
               "violation_low,t_reduced_s,t_primal_s,t_dual_s,t_bounds_s,status").split(",")


class DegenerateReduced(ValueError):
    pass


@dataclass
class BoundsRow:
    eps: float
    V_reduced: float
    chi_upper: Optional[float] = None
    chi_lower: Optional[float] = None
    V_primal: Optional[float] = None
    V_dual: Optional[float] = None
    ode_error: float = 0.0          # quadrature error estimate of the lower bound
    solve_tol: float = 1e-8
    t_reduced: float = 0.0
    t_primal: Optional[float] = None
    t_dual: Optional[float] = None
    t_bounds: Optional[float] = None
    status: str = "ok"

    @property
    def gap(self) -> Optional[float]:
        if self.chi_upper is None or self.chi_lower is None:
            return None
        return self.chi_upper - self.chi_lower

    @property
    def delta(self) -> float:
        """Allowed sandwich slack."""
        return 10.0 * (self.solve_tol + self.ode_error)

    @property
    def violation_up(self) -> Optional[float]:
        if self.V_primal is None or self.chi_upper is None:
            return None
        return max(0.0, self.V_primal - self.chi_upper)

    @property
    def violation_low(self) -> Optional[float]:
        if self.V_primal is None or self.chi_lower is None:
            return None
        return max(0.0, self.chi_lower - self.V_primal)

    @property
    def sandwich_ok(self) -> Optional[bool]:
        if self.violation_up is None:
            return None
        return self.violation_up <= self.delta and self.violation_low <= self.delta

    def C(self) -> Optional[float]:
        g = self.gap
        if g is None or self.V_reduced == 0:
            return None
        return abs(g) / (self.eps * abs(self.V_reduced))


@dataclass
class BoundsReport:
    problem: str
    rows: list
    V_reduced: float
    slope: Optional[float] = None
    C: Optional[float] = None
    C_raw: Optional[float] = None     # |gap| / eps at the smallest eps, not normalised

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            vals = [r.eps, r.V_reduced, r.V_primal, r.V_dual, r.chi_upper, r.chi_lower, r.gap,
                    r.C(), r.violation_up, r.violation_low, r.t_reduced, r.t_primal, r.t_dual,
                    r.t_bounds]
            lines.append(",".join([self.problem] + [_fmt(v) for v in vals] + [r.status]))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return f"{float(v):.15g}"


# ---------------------------------------------------------------------------

def upper_bound(p: SpocProblem, eps: float, ubar: Trajectory, cfg: IntegratorConfig | None = None,
                refine: int = 0) -> tuple[float, ForwardSolution]:
    """Cost of the full problem along the reduced control."""
    zhat = integrate_forward(p, eps, ubar, cfg=cfg, refine=refine)
    return primal_functional(zhat, None, eps, p, cfg), zhat


def lower_bound(p: SpocProblem, eps: float, zhat: ForwardSolution,
                cfg: IntegratorConfig | None = None):
    """Dual objective at ``rho = Q zhat`` and its backward costate.

    Returns ``(chi_l, gamma_hat, rho, err)`` where ``err`` estimates the
    quadrature error of the conjugate term.
    """
    gammaT = -p.pi_scaled(eps) @ zhat.z[-1]
    bw = integrate_dual_backward(p, eps, zhat, gammaT, cfg)
    chi_l, err = dual_functional(None, bw, eps, p, cfg, with_error=True)
    rho = np.einsum("ij,nj->ni", p.Q(0.0, eps), zhat.z) if not p.time_varying else \
        np.stack([p.Q(t, eps) @ z for t, z in zip(zhat.nodes, zhat.z)])
    return chi_l, bw, Trajectory(zhat.nodes, {"rho": rho}), err


def evaluate_bounds(p: SpocProblem, eps: float, ubar: Trajectory,
                    cfg: IntegratorConfig | None = None):
    """Both bounds, refining the integration mesh until the quadrature
    estimate meets ``cfg``.  Returns ``(chi_u, chi_l, err, zhat, gamma_hat)``."""
    cfg = cfg or IntegratorConfig()
    for refine in range(cfg.max_refine + 1):
        chi_u, zhat = upper_bound(p, eps, ubar, cfg, refine)
        chi_l, bw, _, err = lower_bound(p, eps, zhat, cfg)
        if err <= cfg.rel_tol * abs(chi_l) + cfg.abs_tol:
            return chi_u, chi_l, err, zhat, bw
    raise ToleranceNotMet(f"quadrature error {err:.3e} after {cfg.max_refine} refinements")


def error_constant(rows: Sequence[BoundsRow], V_reduced: float, threshold: float = 1e-12,
                   normalise: bool = True) -> float:
    """``|chi_u - chi_l| / (eps |V_reduced|)`` at the smallest eps with a gap."""
    if abs(V_reduced) < threshold:
        raise DegenerateReduced(f"|V_reduced| = {abs(V_reduced):.3e} is too small to normalise by")
    good = [r for r in rows if r.gap is not None]
    if not good or min(r.eps for r in good) > 1e-4:
        raise ValueError("error constant needs a row with eps <= 1e-4")
    r = min(good, key=lambda r: r.eps)
    raw = abs(r.gap) / r.eps
    return raw / abs(V_reduced) if normalise else raw


def fit_slope(eps, gaps) -> Optional[float]:
    """Least-squares slope of log|gap| against log eps; None with fewer than two points."""
    eps = np.asarray(eps, float)
    gaps = np.abs(np.asarray(gaps, float))
    keep = gaps > 0
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(eps[keep]), np.log(gaps[keep]), 1)[0])


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepOptions:
    """``extrapolate`` adds a solve on a doubled mesh and reports the
    Richardson value ``(4 V_2N - V_N)/3`` for the reduced, primal and dual
    columns."""

    solve_primal: bool = True
    solve_dual: bool = True
    nodes: int = 400
    tol_solve: float = 1e-8
    extrapolate: bool = False
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)


def _timed(fn, *a, **kw):
    t0 = time.perf_counter()
    out = fn(*a, **kw)
    return out, time.perf_counter() - t0


def _checked(result, what):
    if not result.converged:
        raise RuntimeError(f"{what} solve did not converge ({result.status})")
    return result.objective


def _richardson(vN, v2N):
    return (4.0 * v2N - vN) / 3.0


def _transcribed_value(p, eps, opts: SweepOptions, dual: bool):
    vals = []
    for N in ((opts.nodes, 2 * opts.nodes) if opts.extrapolate else (opts.nodes,)):
        prog = transcribe_primal(p, eps, problem_mesh(p, eps, N))
        res = solve(transcribe_dual(DualProblem(p), eps, problem_mesh(p, eps, N)) if dual else prog,
                    tol=opts.tol_solve)
        vals.append(_checked(res, "dual" if dual else "primal"))
    return _richardson(*vals) if opts.extrapolate else vals[0]


def sweep(p: SpocProblem, eps_list: Sequence[float], opts: SweepOptions | None = None,
          name: Optional[str] = None) -> BoundsReport:
    opts = opts or SweepOptions()
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if not eps_list or eps_list[-1] <= 0:
        raise ValueError("eps values must be positive")

    def reduced():
        rp = reduce(p)
        res = solve(transcribe_reduced(rp, build_mesh(p.T, 0.0, opts.nodes)), tol=opts.tol_solve)
        V = _checked(res, "reduced")
        if opts.extrapolate:
            fine = solve(transcribe_reduced(rp, build_mesh(p.T, 0.0, 2 * opts.nodes)),
                         tol=opts.tol_solve)
            V = _richardson(V, _checked(fine, "reduced"))
        return V, res.trajectory.channel("u")

    (V_red, ubar), t_red = _timed(reduced)
    rows = []
    for eps in eps_list:
        row = BoundsRow(eps, V_red, solve_tol=opts.tol_solve, t_reduced=t_red)
        failures = []
        try:
            (chi_u, chi_l, err, _, _), row.t_bounds = _timed(evaluate_bounds, p, eps, ubar,
                                                             opts.integrator)
            row.chi_upper, row.chi_lower, row.ode_error = chi_u, chi_l, err
        except Exception as exc:  # recorded per row, the sweep goes on
            failures.append(f"bounds:{type(exc).__name__}")
        for flag, dual in ((opts.solve_primal, False), (opts.solve_dual, True)):
            if not flag:
                continue
            try:
                v, t = _timed(_transcribed_value, p, eps, opts, dual)
            except Exception as exc:
                failures.append(f"{'dual' if dual else 'primal'}:{type(exc).__name__}")
                continue
            if dual:
                row.V_dual, row.t_dual = v, t
            else:
                row.V_primal, row.t_primal = v, t
        if failures:
            row.status = "failed(" + ";".join(failures) + ")"
        elif row.gap is not None and row.gap < -row.delta:
            row.status = "negative_gap"
        elif row.sandwich_ok is False:
            row.status = "violation"
        rows.append(row)

    with_gap = [r for r in rows if r.gap is not None]
    small = [r for r in with_gap if r.eps <= 0.1]
    slope = fit_slope([r.eps for r in small], [r.gap for r in small])
    try:
        C = error_constant(rows, V_red)
        C_raw = error_constant(rows, V_red, normalise=False)
    except ValueError:
        C = C_raw = None
    return BoundsReport(name or p.name, rows, V_red, slope, C, C_raw)
