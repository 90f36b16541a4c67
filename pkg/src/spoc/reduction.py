"""The eps -> 0 limit problem and zeroth-order asymptotic corrections.

Eliminating the fast state through ``0 = A21 x + A22 z2`` gives
``z2 = -A22^{-1} A21 x`` and hence the reduced data::

    Acal = A11 - A12 A22^{-1} A21
    Qcal = K' Q K,   K = [I; -A22^{-1} A21]

(all leading terms in eps).  Boundary-layer terms are built from matrix
exponentials in the stretched variables ``tau = t/eps`` and
``sigma = (T - t)/eps``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .problem_model import SpocProblem, Trajectory

__all__ = [
    "ReducedProblem",
    "LayerTerms",
    "SingularA22",
    "UnstableLayer",
    "reduce",
    "recover_fast_outer",
    "boundary_layers",
]


class SingularA22(ValueError):
    pass


class UnstableLayer(ValueError):
    pass


def _lu(M: np.ndarray, t: float):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SingularA22(f"A22 factorization failed at t={t:.6g}: {exc}") from None
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(1.0, np.max(np.abs(M))):
        raise SingularA22(f"A22 is singular at t={t:.6g}")
    return lu


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """Limit problem in the slow state alone.

    Matrix data is exposed as functions of ``t``; constant-coefficient
    parents are evaluated once.
    """

    parent: SpocProblem

    @property
    def m(self) -> int:
        return self.parent.m

    @property
    def k(self) -> int:
        return self.parent.k

    @property
    def T(self) -> float:
        return self.parent.T

    @property
    def name(self) -> str:
        return self.parent.name

    @property
    def time_varying(self) -> bool:
        return self.parent.time_varying

    @property
    def x0(self) -> np.ndarray:
        return self.parent.z0[: self.m]

    @cached_property
    def pi110(self) -> np.ndarray:
        return self.parent.pi11(0.0, 0.0)

    def K(self, t: float) -> np.ndarray:
        """``[I; -A22^{-1} A21]`` at eps = 0."""
        p = self.parent
        lu = _lu(p.A22(t, 0.0), t)
        return np.vstack([np.eye(self.m), -sla.lu_solve(lu, p.A21(t, 0.0))])

    def _blocks(self, t: float):
        if not self.time_varying and hasattr(self, "_const"):
            return self._const
        p = self.parent
        K = self.K(t)
        A = p.A11(t, 0.0) + p.A12(t, 0.0) @ K[self.m:]
        Q = K.T @ p.Q(t, 0.0) @ K
        out = (A, 0.5 * (Q + Q.T))
        if not self.time_varying:
            object.__setattr__(self, "_const", out)
        return out

    def Acal(self, t: float) -> np.ndarray:
        return self._blocks(t)[0]

    def Qcal(self, t: float) -> np.ndarray:
        return self._blocks(t)[1]

    def b10(self, t: float) -> np.ndarray:
        return self.parent.b1(t, 0.0)

    def R0(self, t: float) -> np.ndarray:
        return self.parent.R(t, 0.0)

    def box(self, t: float):
        return self.parent.box(t)


def reduce(p: SpocProblem) -> ReducedProblem:
    rp = ReducedProblem(p)
    ts = np.linspace(0.0, p.T, 9) if p.time_varying else [0.0]
    for t in ts:
        rp.Acal(t)  # surfaces SingularA22 eagerly
    return rp


def recover_fast_outer(rp: ReducedProblem, p: SpocProblem, x, chi1, t: float):
    """Outer fast state and costate from the algebraic rows of the outer system."""
    x = np.asarray(x, float)
    chi1 = np.asarray(chi1, float)
    A22 = p.A22(t, 0.0)
    z2o = -sla.lu_solve(_lu(A22, t), p.A21(t, 0.0) @ x)
    rhs = p.A12(t, 0.0).T @ chi1 + p.Q21(t, 0.0) @ x + p.Q22(t, 0.0) @ z2o
    chi2o = -sla.lu_solve(_lu(A22.T, t), rhs)
    return z2o, chi2o


@dataclass(frozen=True, eq=False)
class LayerTerms:
    tau: np.ndarray
    z2i: np.ndarray
    chi2i: np.ndarray
    sigma: np.ndarray
    chi2f: np.ndarray
    rate_initial: float
    rate_terminal: float

    def as_trajectories(self) -> tuple[Trajectory, Trajectory]:
        return (Trajectory(self.tau, {"z2i": self.z2i, "chi2i": self.chi2i}),
                Trajectory(self.sigma, {"chi2f": self.chi2f}))


def _abscissa(M):
    return float(np.max(np.linalg.eigvals(M).real))


def boundary_layers(p: SpocProblem, outer: Trajectory, n_grid: int = 401,
                    span: float = 40.0) -> LayerTerms:
    """Zeroth-order layer terms.

    ``outer`` must carry channels ``z`` (full state, fast block recovered)
    and ``chi`` at ``t = 0`` and ``t = T``.  The initial layer solves
    ``dz2i/dtau = A22(0) z2i`` from ``z20 - z2o(0)``; its costate partner
    decays with it, ``chi2i = Omega z2i`` where ``A22' Omega + Omega A22 =
    -Q22`` selects the decaying solution.  The terminal costate layer is
    ``chi2f(sigma) = exp(A22(T)' sigma) (pi22 z2o(T) - chi2o(T))`` with no
    terminal state layer.  Grids run to ``span`` decay lengths.
    """
    m = p.m
    A0, AT = p.A22(0.0, 0.0), p.A22(p.T, 0.0)
    k0, kT = -_abscissa(A0), -_abscissa(AT)
    if not (k0 > 0 and kT > 0):
        raise UnstableLayer("A22 at eps = 0 is not Hurwitz at an endpoint")
    tau = np.linspace(0.0, span / k0, n_grid)
    sigma = np.linspace(0.0, span / kT, n_grid)

    z_start = outer["z"][0]
    d0 = p.z0[m:] - z_start[m:]
    expA0 = sla.expm(A0 * (tau[1] - tau[0]))
    z2i = np.empty((n_grid, p.n))
    z2i[0] = d0
    for i in range(1, n_grid):
        z2i[i] = expA0 @ z2i[i - 1]
    Omega = sla.solve_continuous_lyapunov(A0.T, -p.Q22(0.0, 0.0))
    chi2i = z2i @ Omega.T

    zT, chiT = outer["z"][-1], outer["chi"][-1]
    dT = p.pi22(0.0, 0.0) @ zT[m:] - chiT[m:]
    expAT = sla.expm(AT.T * (sigma[1] - sigma[0]))
    chi2f = np.empty((n_grid, p.n))
    chi2f[0] = dT
    for i in range(1, n_grid):
        chi2f[i] = expAT @ chi2f[i - 1]
    return LayerTerms(tau, z2i, chi2i, sigma, chi2f, k0, kT)
