"""Trapezoidal transcription of the full, reduced and dual problems.

The primal and reduced problems become sparse convex QPs over nodal
states and controls, solved by a Mehrotra primal-dual interior point
method.  The dual is transcribed as the exact Lagrangian dual of the
discrete primal: one multiplier ``gamma_j`` per collocation interval,
``rho`` eliminated through the discrete dual dynamics, leaving a smooth
concave program in ``gamma`` alone.  It is solved by a semismooth Newton
method with a block-tridiagonal Hessian.  Because the two discrete
programs are an exact primal/dual pair, their optimal values agree to
solver tolerance.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem_model import SpocProblem, Trajectory

__all__ = [
    "GradingConfig",
    "Mesh",
    "LQProgram",
    "DualProgram",
    "SolveResult",
    "MissingMultipliers",
    "build_mesh",
    "problem_mesh",
    "layer_rate",
    "transcribe_primal",
    "transcribe_reduced",
    "transcribe_dual",
    "solve",
    "extract_costate",
    "trapezoid_weights",
]


class MissingMultipliers(ValueError):
    pass


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradingConfig:
    """Boundary-layer grading rule.

    Layer width is ``min(T/4, c * eps * ln(1/eps) / kappa)`` where
    ``kappa`` is the fast decay rate (1 reproduces the plain rule).
    Inside a layer nodes are uniform in ``ln(1 + s*kappa/eps)``, ``s`` the
    distance to the nearest endpoint.
    """

    c: float = 10.0
    fraction: float = 0.3
    kappa: float = 1.0
    log_grading: bool = True
    stiff_ratio: float = 0.01  # grade when eps < stiff_ratio * T


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    grading: str = "uniform"
    layer_width: float = 0.0
    layer_intervals: int = 0

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])


def _layer_nodes(w: float, n: int, eps: float, kappa: float, log_grading: bool) -> np.ndarray:
    """Offsets ``0 = s_0 < ... < s_n = w`` clustered toward 0."""
    if not log_grading:
        return np.linspace(0.0, w, n + 1)
    scale = eps / kappa
    xi = np.linspace(0.0, math.log1p(w / scale), n + 1)
    s = scale * np.expm1(xi)
    s[-1] = w
    return s


def build_mesh(T: float, eps: float, N: int = 400, grading: GradingConfig | None = None) -> Mesh:
    if N < 16:
        raise ValueError("N must be at least 16")
    g = grading or GradingConfig()
    if not (eps > 0 and eps < g.stiff_ratio * T):
        return Mesh(np.linspace(0.0, T, N + 1))
    w = min(T / 4.0, g.c * eps * math.log(1.0 / eps) / g.kappa) if eps < 1 else T / 4.0
    nl = math.ceil(g.fraction * N)
    nm = N - 2 * nl
    if nm < 1:
        return Mesh(np.linspace(0.0, T, N + 1))
    left = _layer_nodes(w, nl, eps, g.kappa, g.log_grading)
    mid = np.linspace(w, T - w, nm + 1)
    right = T - left[::-1]
    nodes = np.concatenate([left, mid[1:-1], right])
    return Mesh(nodes, "graded", w, nl)


def problem_mesh(p: SpocProblem, eps: float, N: int = 400,
                 grading: GradingConfig | None = None) -> Mesh:
    """:func:`build_mesh` with the layer width scaled by the problem's fast decay rate."""
    g = grading or GradingConfig()
    if eps > 0 and eps < g.stiff_ratio * p.T:
        g = replace(g, kappa=layer_rate(p))
    return build_mesh(p.T, eps, N, g)


def layer_rate(p: SpocProblem) -> float:
    """Slowest decay rate of the fast subsystem at eps = 0 over the horizon."""
    ts = np.linspace(0.0, p.T, 9) if p.A22.Dt > 0 else np.array([0.0])
    rates = [-np.max(np.linalg.eigvals(p.A22(t, 0.0)).real) for t in ts]
    rate = float(min(rates))
    if not rate > 0:
        raise ValueError("A22 at eps = 0 is not Hurwitz; no boundary-layer decay")
    return rate


def trapezoid_weights(t: np.ndarray) -> np.ndarray:
    h = np.diff(t)
    w = np.zeros(t.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


# ---------------------------------------------------------------------------
# Discrete programs
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class LQProgram:
    """Discrete LQ problem on a mesh.

    Dynamics ``E z' = A z + B u`` (``B`` already includes ``E``), cost
    ``1/2 int z'Qz + u'Ru + 1/2 z(T)' P z(T)``, box ``lo <= u <= hi``.
    ``Pchi`` maps ``z(T)`` to the terminal costate.
    """

    kind: str
    t: np.ndarray
    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    Pchi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    z0: np.ndarray
    eps: float
    name: str = "problem"

    @property
    def N(self) -> int:
        return self.t.size - 1

    @property
    def d(self) -> int:
        return self.E.size

    @property
    def k(self) -> int:
        return self.R.shape[1]

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def w(self) -> np.ndarray:
        return trapezoid_weights(self.t)

    def objective(self, z: np.ndarray, u: np.ndarray) -> float:
        w = self.w
        run = np.einsum("i,ij,ijk,ik->", w, z, self.Q, z) + np.einsum("i,ij,ij,ij->", w, u, self.R, u)
        return 0.5 * float(run + z[-1] @ self.P @ z[-1])


@dataclass(eq=False)
class DualProgram:
    """Lagrangian dual of an :class:`LQProgram`, a concave program in gamma."""

    primal: LQProgram


def _sample(cm_eval, t, const: bool):
    if const:
        v = cm_eval(0.0)
        return np.broadcast_to(v, (t.size,) + v.shape).copy()
    return np.stack([cm_eval(ti) for ti in t])


def transcribe_primal(p: SpocProblem, eps: float, mesh: Mesh) -> LQProgram:
    if not eps > 0:
        raise ValueError("eps must be positive; use the reduced problem for the limit")
    t = np.asarray(mesh.nodes, float)
    const = not p.time_varying
    E = p.Ieps(eps)
    A = _sample(lambda s: p.A(s, eps), t, const)
    B = E[None, :, None] * _sample(lambda s: p.b(s, eps), t, const)
    Q = _sample(lambda s: p.Q(s, eps), t, const)
    R = _sample(lambda s: p.R(s, eps), t, const)
    lo = np.stack([p.box(s)[0] for s in t]) if p.alpha.Dt else np.tile(p.box(0.0)[0], (t.size, 1))
    hi = np.stack([p.box(s)[1] for s in t]) if p.beta.Dt else np.tile(p.box(0.0)[1], (t.size, 1))
    return LQProgram("primal", t, E, A, B, 0.5 * (Q + np.swapaxes(Q, 1, 2)), R, p.pi(eps),
                     p.pi_scaled(eps), lo, hi, np.array(p.z0), float(eps), p.name)


def transcribe_reduced(rp, mesh: Mesh) -> LQProgram:
    t = np.asarray(mesh.nodes, float)
    const = not rp.time_varying
    m = rp.m
    A = _sample(rp.Acal, t, const)
    B = _sample(rp.b10, t, const)
    Q = _sample(rp.Qcal, t, const)
    R = _sample(rp.R0, t, const)
    lo = np.stack([rp.box(s)[0] for s in t])
    hi = np.stack([rp.box(s)[1] for s in t])
    return LQProgram("reduced", t, np.ones(m), A, B, Q, R, rp.pi110, rp.pi110, lo, hi,
                     np.array(rp.x0), 0.0, rp.name)


def transcribe_dual(dp, eps: float, mesh: Mesh) -> DualProgram:
    return DualProgram(transcribe_primal(dp.problem, eps, mesh))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SolveResult:
    status: str
    objective: float
    trajectory: Trajectory
    stationarity: float
    feasibility: float
    iterations: int
    wall_time: float
    kind: str = "primal"
    program: Optional[LQProgram] = field(default=None, repr=False)
    gamma: Optional[np.ndarray] = field(default=None, repr=False)  # per-interval multipliers
    iterate: Optional[dict] = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


# ---------------------------------------------------------------------------
# Primal QP: Mehrotra interior point on a sparse KKT system
# ---------------------------------------------------------------------------

class _QP:
    def __init__(self, prog: LQProgram):
        self.prog = prog
        N, d, k = prog.N, prog.d, prog.k
        h, w = prog.h, prog.w
        self.nz, self.nu = (N + 1) * d, (N + 1) * k
        self.n = self.nz + self.nu
        self.w = w
        zi = lambda i: i * d
        ui = lambda i: self.nz + i * k

        # Hessian blocks
        Hz = w[:, None, None] * prog.Q
        Hz[-1] += prog.P
        Hu = w[:, None] * prog.R
        rows, cols, vals = [], [], []
        ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
        for i in range(N + 1):
            rows.append(zi(i) + ii.ravel()); cols.append(zi(i) + jj.ravel()); vals.append(Hz[i].ravel())
        rows.append(self.nz + np.arange(self.nu)); cols.append(self.nz + np.arange(self.nu))
        vals.append(Hu.ravel())
        self.H = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(self.n, self.n))

        # Equality constraints, interval rows scaled by 1/h_j
        E = prog.E
        r, c, v = [np.arange(d)], [np.arange(d)], [np.ones(d)]
        kk_r, kk_c = np.meshgrid(np.arange(d), np.arange(k), indexing="ij")
        for j in range(N):
            row0 = d + j * d
            Cl = -np.diag(E) / h[j] - 0.5 * prog.A[j]
            Cr = np.diag(E) / h[j] - 0.5 * prog.A[j + 1]
            for blk, col0 in ((Cl, zi(j)), (Cr, zi(j + 1))):
                r.append(row0 + ii.ravel()); c.append(col0 + jj.ravel()); v.append(blk.ravel())
            for blk, col0 in ((-0.5 * prog.B[j], ui(j)), (-0.5 * prog.B[j + 1], ui(j + 1))):
                r.append(row0 + kk_r.ravel()); c.append(col0 + kk_c.ravel()); v.append(blk.ravel())
        self.m = (N + 1) * d
        self.C = sp.csc_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                               shape=(self.m, self.n))
        self.C.eliminate_zeros()
        self.rhs = np.zeros(self.m)
        self.rhs[:d] = prog.z0
        self.lo = prog.lo.ravel()
        self.hi = prog.hi.ravel()
        self.wu = np.repeat(w, k)
        self.wz = np.repeat(w, d)
        self.absH, self.absCT = abs(self.H), abs(self.C.T).tocsr()
        self.K0 = sp.bmat([[self.H, self.C.T], [self.C, None]], format="csc")
        self.udiag = self._diag_positions(self.K0, self.nz + np.arange(self.nu))

    @staticmethod
    def _diag_positions(K, idx):
        pos = np.empty(idx.size, dtype=np.int64)
        for n, col in enumerate(idx):
            start, stop = K.indptr[col], K.indptr[col + 1]
            hit = np.flatnonzero(K.indices[start:stop] == col)
            pos[n] = start + hit[0]
        return pos

    def residuals(self, x, y, l1, l2):
        rd = self.H @ x + self.C.T @ y
        rd[self.nz:] -= l1 - l2
        rp = self.C @ x - self.rhs
        return rd, rp

    def measures(self, rd, rp, s1, s2, l1, l2, x, y):
        # each stationarity row against the size of the terms that make it up,
        # with the quadrature weight as floor; in thin layer cells the
        # multiplier terms are far larger than the weight
        size = self.absH @ np.abs(x) + self.absCT @ np.abs(y)
        size[self.nz:] += l1 + l2
        scale = np.concatenate([self.wz, self.wu])
        stat = float(np.max(np.abs(rd) / np.maximum(scale, size)))
        feas = float(np.max(np.abs(rp)))
        comp = float(np.max(np.maximum(s1 * l1, s2 * l2) / self.wu))
        return stat, feas, comp

    def solve_kkt(self, lu, rx, ry):
        sol = lu.solve(np.concatenate([rx, ry]))
        return sol[: self.n], sol[self.n:]


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _solve_qp(prog: LQProgram, tol: float, max_iter: int, warm: Optional[SolveResult]):
    t0 = time.perf_counter()
    qp = _QP(prog)
    width = qp.hi - qp.lo
    if np.any(width < 0):
        raise ValueError("empty control box")
    if warm is not None and warm.iterate is not None and warm.iterate["x"].size == qp.n:
        x, y = warm.iterate["x"].copy(), warm.iterate["y"].copy()
        l1, l2 = warm.iterate["l1"].copy(), warm.iterate["l2"].copy()
        s1, s2 = warm.iterate["s1"].copy(), warm.iterate["s2"].copy()
    else:
        x = np.zeros(qp.n)
        x[qp.nz:] = 0.5 * (qp.lo + qp.hi)
        y = np.zeros(qp.m)
        l1 = qp.wu.copy()
        l2 = qp.wu.copy()
    # strictly degenerate boxes get a hair of room so the barrier is defined
    pad = np.where(width > 0, 0.0, 1e-12)
    qp.lo, qp.hi = qp.lo - pad, qp.hi + pad
    if warm is None or warm.iterate is None or warm.iterate["x"].size != qp.n:
        # slacks are iterates of their own so round-off cannot zero them
        s1, s2 = x[qp.nz:] - qp.lo, qp.hi - x[qp.nz:]

    status = "MaxIter"
    it = 0
    stat = feas = math.inf
    for it in range(max_iter + 1):
        rd, rp = qp.residuals(x, y, l1, l2)
        stat, feas, comp = qp.measures(rd, rp, s1, s2, l1, l2, x, y)
        if stat <= tol and feas <= tol and comp <= tol:
            status = "Converged"
            break
        if it == max_iter:
            break
        sig = l1 / s1 + l2 / s2
        K = qp.K0.copy()
        K.data[qp.udiag] += sig
        lu = spla.splu(K, permc_spec="COLAMD")
        mu = float(np.sum((s1 * l1 + s2 * l2) / qp.wu) / (2 * qp.nu))

        def direction(r1, r2):
            rx = -rd.copy()
            rx[qp.nz:] += r1 / s1 - r2 / s2
            dx, dy = qp.solve_kkt(lu, rx, -rp)
            du = dx[qp.nz:]
            dl1 = (r1 - l1 * du) / s1
            dl2 = (r2 + l2 * du) / s2
            return dx, dy, du, dl1, dl2

        dx, dy, du, dl1, dl2 = direction(-l1 * s1, -l2 * s2)
        ap = min(_max_step(s1, du), _max_step(s2, -du))
        ad = min(_max_step(l1, dl1), _max_step(l2, dl2))
        a = min(ap, ad)
        mu_aff = float(np.sum(((s1 + a * du) * (l1 + a * dl1) + (s2 - a * du) * (l2 + a * dl2)) / qp.wu)
                       / (2 * qp.nu))
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # complementarity is never driven far below what convergence needs;
        # at degenerate nodes a collapse to underflow wrecks the KKT matrix
        target = max(sigma * mu, 0.01 * tol) * qp.wu
        r1 = target - l1 * s1 - du * dl1
        r2 = target - l2 * s2 + du * dl2
        dx, dy, du, dl1, dl2 = direction(r1, r2)
        ap = min(_max_step(s1, du), _max_step(s2, -du))
        ad = min(_max_step(l1, dl1), _max_step(l2, dl2))
        a = min(1.0, 0.995 * min(ap, ad))
        x += a * dx
        y += a * dy
        l1 += a * dl1
        l2 += a * dl2
        s1 += a * du
        s2 -= a * du

    N, d, k = prog.N, prog.d, prog.k
    z = x[: qp.nz].reshape(N + 1, d)
    u = x[qp.nz:].reshape(N + 1, k)
    gamma = y[d:].reshape(N, d) / prog.h[:, None]
    iterate = {"x": x, "y": y, "l1": l1, "l2": l2, "s1": s1, "s2": s2}
    res = SolveResult(status, prog.objective(z, u), Trajectory(prog.t, {"z": z, "u": u}),
                      stat, feas, it, time.perf_counter() - t0, prog.kind, prog, gamma, iterate)
    chi = extract_costate(res)
    res.trajectory = res.trajectory.with_channels(chi=chi)
    return res


def _gamma_bar(prog: LQProgram, gamma: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Nodal values of the interval multipliers.

    Interior nodes take step-weighted averages.  The end nodes are carried
    half a step out of the first and last intervals by the stationarity rows
    of ``z_0`` and ``z_N``, which read
    ``E gamma(0) = (E + h_0/2 A_0') gamma_0 - w_0 Q_0 z_0`` and
    ``E gamma(T) = (E - h/2 A_N') gamma_{N-1} + w_N Q_N z_N = -P z_N``.
    """
    h, w, E = prog.h, prog.w, prog.E
    gb = np.empty((prog.N + 1, prog.d))
    gb[1:-1] = (h[:-1, None] * gamma[:-1] + h[1:, None] * gamma[1:]) / (2 * w[1:-1, None])
    g0 = gamma[0]
    gb[0] = g0 + (0.5 * h[0] * prog.A[0].T @ g0 - w[0] * prog.Q[0] @ z[0]) / E
    gb[-1] = -prog.Pchi @ z[-1]
    return gb


def extract_costate(result: SolveResult) -> np.ndarray:
    """Nodal costate ``chi`` from the dynamics multipliers.

    Interior nodes use ``chi_i = -gamma_bar_i``, which makes the discrete
    stationarity in ``u_i`` exactly the clamp formula.  The end values come
    from the stationarity rows of ``z_0`` and ``z_N``; at ``T`` this is the
    transversality condition ``chi(T) = blockdiag(pi11, pi22) z(T)``.
    """
    if result.gamma is None or result.program is None:
        raise MissingMultipliers("result carries no dynamics multipliers")
    prog = result.program
    return -_gamma_bar(prog, result.gamma, result.trajectory["z"])


# ---------------------------------------------------------------------------
# Dual: semismooth Newton on the Lagrangian dual in gamma
# ---------------------------------------------------------------------------

class _DualFunction:
    """phi(gamma) = -J_h(gamma), convex and piecewise quadratic."""

    def __init__(self, prog: LQProgram):
        self.prog = prog
        N, d = prog.N, prog.d
        h, w = prog.h, prog.w
        E = np.diag(prog.E)
        AT = np.swapaxes(prog.A, 1, 2)
        # r_i = Lm_i gamma_{i-1} + Lp_i gamma_i, i = 1..N (no Lp at N)
        self.Lm = -E[None] + 0.5 * h[:, None, None] * AT[1:]          # index i-1 for node i
        self.Lp = E[None] + 0.5 * h[:, None, None] * AT[:-1]          # index i for node i (i < N)
        M = w[1:, None, None] * prog.Q[1:]
        M[-1] = M[-1] + prog.P
        self.Minv = np.linalg.inv(M)
        self.Minv = 0.5 * (self.Minv + np.swapaxes(self.Minv, 1, 2))
        self.a = np.concatenate([[0.0], 0.5 * h])                     # weight on gamma_{i-1}
        self.c = np.concatenate([0.5 * h, [0.0]])                     # weight on gamma_i
        self.const = 0.5 * w[0] * prog.z0 @ prog.Q[0] @ prog.z0
        self.lin0 = self.Lp[0].T @ prog.z0
        self.w = w

    def parts(self, g):
        prog = self.prog
        N = prog.N
        r = np.einsum("ijk,ik->ij", self.Lm, g)
        r[:-1] += np.einsum("ijk,ik->ij", self.Lp[1:], g[1:])
        q = np.einsum("ijk,ik->ij", self.Minv, r)                     # z_1..z_N
        gprev = np.vstack([np.zeros((1, prog.d)), g])                 # gamma_{i-1}, i = 0..N
        gnext = np.vstack([g, np.zeros((1, prog.d))])                 # gamma_i
        comb = self.a[:, None] * gprev + self.c[:, None] * gnext
        sig = np.einsum("ijk,ij->ik", prog.B, comb)                   # w_i s_i
        s = sig / self.w[:, None]
        u = np.clip(s / prog.R, prog.lo, prog.hi)
        theta = np.sum(s * u - 0.5 * prog.R * u * u, axis=1)
        return r, q, s, u, theta

    def value(self, g):
        r, q, s, u, theta = self.parts(g)
        return float(self.lin0 @ g[0] + 0.5 * np.sum(r * q) + self.w @ theta - self.const)

    def grad(self, g, parts=None):
        r, q, s, u, theta = parts if parts is not None else self.parts(g)
        prog = self.prog
        G = np.einsum("ikj,ik->ij", self.Lm, q)
        G[1:] += np.einsum("ikj,ik->ij", self.Lp[1:], q[:-1])
        Bu = np.einsum("ijk,ik->ij", prog.B, u)
        G += self.a[1:, None] * Bu[1:]
        G += self.c[:-1, None] * Bu[:-1]
        G[0] += self.lin0
        return G

    def hessian_blocks(self, parts):
        r, q, s, u, theta = parts
        prog = self.prog
        N, d = prog.N, prog.d
        MLm = np.einsum("ijk,ikl->ijl", self.Minv, self.Lm)
        D = np.einsum("ikj,ikl->ijl", self.Lm, MLm)                   # (i-1, i-1)
        Lp = self.Lp[1:]
        MLp = np.einsum("ijk,ikl->ijl", self.Minv[:-1], Lp)
        D[1:] += np.einsum("ikj,ikl->ijl", Lp, MLp)
        U = np.einsum("ikj,ikl->ijl", self.Lm[:-1], MLp)              # (i-1, i)
        free = (s / prog.R > prog.lo) & (s / prog.R < prog.hi)
        dw = free / (prog.R * self.w[:, None])
        BDB = np.einsum("ijk,ik,ilk->ijl", prog.B, dw, prog.B)
        a, c = self.a, self.c
        D += (a[1:] ** 2)[:, None, None] * BDB[1:]
        D += (c[:-1] ** 2)[:, None, None] * BDB[:-1]
        U += (a[1:-1] * c[1:-1])[:, None, None] * BDB[1:-1]
        return D, U


def _banded_upper(D, U):
    """Pack a symmetric block-tridiagonal matrix into LAPACK upper band form."""
    nb, d, _ = D.shape
    n = nb * d
    bw = 2 * d - 1
    ab = np.zeros((bw + 1, n))
    r, c = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    up = r <= c
    blk = np.arange(nb)[:, None]
    rows = (blk * d + r[up][None]).ravel()
    cols = (blk * d + c[up][None]).ravel()
    ab[bw + rows - cols, cols] = D[:, up].ravel()
    if nb > 1:
        blk = np.arange(nb - 1)[:, None]
        rows = (blk * d + r.ravel()[None]).ravel()
        cols = ((blk + 1) * d + c.ravel()[None]).ravel()
        ab[bw + rows - cols, cols] = U.reshape(nb - 1, -1).ravel()
    return ab


def _newton_step(D, U, G):
    """Solve ``H step = -G`` by banded Cholesky after symmetric diagonal
    equilibration; fast components are scaled by eps and would otherwise
    cost most of the available precision."""
    N, d = G.shape
    ab = _banded_upper(D, U)
    bw = ab.shape[0] - 1
    sc = 1.0 / np.sqrt(np.maximum(ab[-1], 1e-300))
    n = sc.size
    for off in range(bw + 1):
        # row bw - off holds entries (j - off, j)
        ab[bw - off, off:] *= sc[: n - off] * sc[off:]
    # tiny shift guards against round-off indefiniteness
    ab[-1] += 1e-14
    try:
        y = sla.solveh_banded(ab, -sc * G.ravel(), check_finite=False)
    except np.linalg.LinAlgError:
        return -G
    return (sc * y).reshape(N, d)


def _backward_error(prog: LQProgram, G: np.ndarray, parts) -> float:
    """Relative size of the gradient, interval by interval.

    The gradient of the dual is minus the discrete dynamics residual of the
    recovered ``(z, u)``; on each interval it is measured against the
    largest term making up that residual, like a normwise backward error.
    """
    r, q, s, u, theta = parts
    z = np.abs(np.vstack([prog.z0[None], q]))
    ua = np.abs(u)
    Az = np.einsum("ijk,ik->ij", np.abs(prog.A), z)
    Bu = np.einsum("ijk,ik->ij", np.abs(prog.B), ua)
    h = prog.h[:, None]
    size = prog.E * (z[1:] + z[:-1]) + 0.5 * h * (Az[1:] + Az[:-1] + Bu[1:] + Bu[:-1])
    scale = np.max(size, axis=1) + 1e-300
    return float(np.max(np.max(np.abs(G), axis=1) / scale))


def _solve_dual(prog: LQProgram, tol: float, max_iter: int, warm: Optional[SolveResult]):
    t0 = time.perf_counter()
    f = _DualFunction(prog)
    N, d = prog.N, prog.d
    h = prog.h
    if warm is not None and warm.gamma is not None and warm.gamma.shape == (N, d):
        g = warm.gamma.copy()
    else:
        g = np.zeros((N, d))
    status = "MaxIter"
    it = 0
    parts = f.parts(g)
    val = f.value(g)
    stat = math.inf
    stalled = 0
    for it in range(max_iter + 1):
        G = f.grad(g, parts)
        stat = _backward_error(prog, G, parts)
        if stat <= tol:
            status = "Converged"
            break
        if it == max_iter:
            break
        D, U = f.hessian_blocks(parts)
        step = _newton_step(D, U, G)
        slope = float(np.sum(G * step))
        if slope >= 0:
            step, slope = -G, -float(np.sum(G * G))
        a = 1.0
        while True:
            trial = g + a * step
            tv = f.value(trial)
            if tv <= val + 1e-4 * a * slope or a < 1e-12:
                break
            a *= 0.5
        if a < 1e-12 and tv > val:
            status = "Converged" if stat <= 100 * tol else "Stalled"
            break
        stalled = stalled + 1 if (a < 1.0 and val - tv <= 1e-15 * abs(val)) else 0
        if stalled >= 5:
            # no progress left in floating point; accept a near miss
            status = "Converged" if stat <= 100 * tol else "Stalled"
            break
        g, val = trial, tv
        parts = f.parts(g)
    r, q, s, u, theta = parts
    z = np.vstack([prog.z0[None], q])
    gb = _gamma_bar(prog, g, z)
    rho = np.einsum("ijk,ik->ij", prog.Q, z)
    traj = Trajectory(prog.t, {"z": z, "u": u, "gamma": gb, "rho": rho})
    return SolveResult(status, -val, traj, stat, 0.0, it, time.perf_counter() - t0,
                       "dual", prog, g, None)


# ---------------------------------------------------------------------------

def solve(program, tol: float = 1e-8, max_iter: int = 200,
          warm: Optional[SolveResult] = None) -> SolveResult:
    """Solve a transcribed program.

    ``warm`` restarts from a previous result; an already converged iterate
    returns after the residual check with zero iterations.
    """
    if isinstance(program, DualProgram):
        return _solve_dual(program.primal, tol, max_iter, warm)
    return _solve_qp(program, tol, max_iter, warm)
