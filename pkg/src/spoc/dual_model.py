"""Dual problem data, the conjugate theta and the clamp maps.

With ``E = I^eps`` the dual reads::

    maximise  int -1/2 rho'Q^{-1}rho - theta(gamma) dt
              - gamma(0)' E z0 - 1/2 gamma(T)' E pi^{-1} E gamma(T)
    subject to  E gamma' = -A' gamma + rho,  gamma free at both ends,

where ``theta`` is the conjugate of the control cost restricted to the
box.  Componentwise, with ``s = (b' E gamma)_j``::

    theta_j = s^2 / (2 R_jj)              if alpha_j <= s/R_jj <= beta_j
              alpha_j s - alpha_j^2 R_jj/2  below
              beta_j s - beta_j^2 R_jj/2    above

which is ``s c - R_jj c^2 / 2`` at ``c = median(alpha_j, s/R_jj, beta_j)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .problem_model import MeshMismatch, SpocProblem, Trajectory

__all__ = [
    "DualProblem",
    "ClampBox",
    "ResidualTooLarge",
    "clamp_projection",
    "theta",
    "theta_many",
    "dual_dynamics_rhs",
    "dual_objective",
    "boundary_terms",
    "construct_dual_from_primal",
]


class ResidualTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ClampBox:
    p: SpocProblem

    def lower(self, t: float) -> np.ndarray:
        return self.p.box(t)[0]

    def upper(self, t: float) -> np.ndarray:
        return self.p.box(t)[1]


@dataclass(frozen=True, eq=False)
class DualProblem:
    problem: SpocProblem

    def __post_init__(self):
        p = self.problem
        for e in (0.0, p.eps_star):
            np.linalg.cholesky(p.Q(0.0, e))
            np.linalg.cholesky(p.pi11(0.0, e))
            np.linalg.cholesky(p.pi22(0.0, e))

    @cached_property
    def box(self) -> ClampBox:
        return ClampBox(self.problem)

    def Qinv(self, t: float, eps: float) -> np.ndarray:
        return np.linalg.inv(self.problem.Q(t, eps))

    def pi_inv_scaled(self, eps: float) -> np.ndarray:
        """``E pi^{-1} E = blockdiag(pi11^{-1}, eps pi22^{-1})``; no 1/eps appears."""
        return _pi_inv_scaled(self.problem, eps)


def _pi_inv_scaled(p: SpocProblem, eps: float) -> np.ndarray:
    out = np.zeros((p.d, p.d))
    out[: p.m, : p.m] = np.linalg.inv(p.pi11(0.0, eps))
    out[p.m:, p.m:] = eps * np.linalg.inv(p.pi22(0.0, eps))
    return out


def clamp_projection(s, t: float, eps: float, p: SpocProblem, sign: str = "dual") -> np.ndarray:
    """``median(alpha, s, beta)`` componentwise.

    ``s`` is the pre-clamp vector ``R^{-1} b' E y``.  For ``sign="primal"``
    the input came from a costate ``chi`` and is negated first, following
    ``u = clamp(-R^{-1} b' E chi)``; for ``"dual"`` it is used as is.
    """
    if sign not in ("primal", "dual"):
        raise ValueError("sign must be 'primal' or 'dual'")
    s = np.asarray(s, float)
    lo, hi = p.box(t)
    return np.clip(-s if sign == "primal" else s, lo, hi)


def _theta_from_s(s, R, lo, hi):
    c = np.clip(s / R, lo, hi)
    return np.sum(s * c - 0.5 * R * c * c, axis=-1)


def theta(gamma, t: float, eps: float, p: SpocProblem) -> float:
    gamma = np.asarray(gamma, float)
    s = p.b(t, eps).T @ (p.Ieps(eps) * gamma)
    lo, hi = p.box(t)
    return float(_theta_from_s(s, p.R(t, eps), lo, hi))


def theta_many(p: SpocProblem, eps: float, t: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """theta at many ``(t_i, gamma_i)`` pairs."""
    t = np.asarray(t, float)
    E = p.Ieps(eps)
    if not p.time_varying:
        s = (gamma * E) @ p.b(0.0, eps)
        lo, hi = p.box(0.0)
        return _theta_from_s(s, p.R(0.0, eps), lo, hi)
    out = np.empty(t.size)
    for i, ti in enumerate(t):
        out[i] = theta(gamma[i], ti, eps, p)
    return out


def dual_dynamics_rhs(gamma, rho, t: float, eps: float, p: SpocProblem) -> np.ndarray:
    """``d(E gamma)/dt = -A' gamma + rho``."""
    return -p.A(t, eps).T @ np.asarray(gamma, float) + np.asarray(rho, float)


def boundary_terms(p: SpocProblem, eps: float, gamma0, gammaT) -> float:
    g0 = np.asarray(gamma0, float)
    gT = np.asarray(gammaT, float)
    return float(-g0 @ (p.Ieps(eps) * p.z0) - 0.5 * gT @ _pi_inv_scaled(p, eps) @ gT)


def dual_objective(rho: Trajectory, gamma: Trajectory, eps: float, p: SpocProblem,
                   quad: str = "simpson") -> float:
    """Dual functional of piecewise-linear channels ``rho`` and ``gamma``.

    ``quad="simpson"`` integrates theta with Simpson's rule on interval
    midpoints; ``"trapezoid"`` uses nodal values only.
    """
    if not rho.same_mesh(gamma):
        raise MeshMismatch("rho and gamma must share a mesh")
    from .ode_eval import _pl_quadratic, _sample_mats
    t = rho.mesh
    r, g = rho["rho"], gamma["gamma"]
    Qinv = _sample_mats(lambda s: np.linalg.inv(p.Q(s, eps)), t, not p.time_varying)
    h = np.diff(t)
    th = theta_many(p, eps, t, g)
    if quad == "trapezoid":
        Qn = np.einsum("ni,nij,nj->n", r, Qinv, r)
        run = -0.5 * float(np.sum(h * (Qn[:-1] + Qn[1:]) / 2)) - float(np.sum(h * (th[:-1] + th[1:]) / 2))
    elif quad == "simpson":
        thm = theta_many(p, eps, 0.5 * (t[:-1] + t[1:]), 0.5 * (g[:-1] + g[1:]))
        run = -0.5 * _pl_quadratic(t, r, Qinv) - float(np.sum(h / 6 * (th[:-1] + 4 * thm + th[1:])))
    else:
        raise ValueError(f"unknown quadrature {quad!r}")
    return run + boundary_terms(p, eps, g[0], g[-1])


def construct_dual_from_primal(z: Trajectory, chi: Trajectory, eps: float, p: SpocProblem,
                               tol: float = 1e-2) -> Trajectory:
    """Dual triple ``gamma = -chi``, ``mu = z``, ``rho = Q z``.

    The dual dynamics residual, taken in trapezoidal form on the mesh and
    scaled by the size of its terms, must not exceed ``tol``.
    """
    if not z.same_mesh(chi):
        raise MeshMismatch("z and chi must share a mesh")
    t = z.mesh
    zz, cc = z["z"], chi["chi"]
    const = not p.time_varying
    Q = np.stack([p.Q(s, eps) for s in (t[:1] if const else t)])
    A = np.stack([p.A(s, eps) for s in (t[:1] if const else t)])
    if const:
        Q = np.broadcast_to(Q[0], (t.size,) + Q.shape[1:])
        A = np.broadcast_to(A[0], (t.size,) + A.shape[1:])
    gamma = -cc
    rho = np.einsum("nij,nj->ni", Q, zz)
    E = p.Ieps(eps)
    rhs = -np.einsum("nji,nj->ni", A, gamma) + rho
    h = np.diff(t)[:, None]
    lhs = E * (gamma[1:] - gamma[:-1]) / h
    avg = 0.5 * (rhs[1:] + rhs[:-1])
    # interior intervals only; the end nodes carry transversality values
    res = np.abs(lhs - avg)[1:-1]
    scale = (np.abs(E * gamma[1:] / h) + np.abs(E * gamma[:-1] / h) + np.abs(avg))[1:-1]
    rel = float(np.max(np.max(res, axis=1) / (np.max(scale, axis=1) + 1e-300))) if res.size else 0.0
    if rel > tol:
        raise ResidualTooLarge(f"dual dynamics residual {rel:.3e} exceeds {tol:.1e}")
    return Trajectory(t, {"gamma": gamma, "mu": zz, "rho": rho})
