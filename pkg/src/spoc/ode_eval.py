"""Exponential integration of the state and dual equations.

For constant coefficients the flows are exact.  A piecewise-linear input
``u(t) = u_n + (t - t_n) v_n`` is carried in the augmented state
``X = [z; u; v]`` with generator::

    G = [[E^{-1} A, b, 0],
         [0,        0, I],
         [0,        0, 0]]

so a step is ``X_{n+1} = exp(G h) X_n`` (with ``v`` reset at breakpoints).
The dual equation ``E gamma' = -A' gamma + rho`` is run in reversed time,
where it reads ``dgamma/dq = P gamma - E^{-1} rho`` with ``P = E^{-1} A'``.
When ``rho = W X`` for some linear map ``W`` of a driving signal with
generator ``G``, a backward step is::

    gamma_n = exp(P h) gamma_{n+1} - Y(h) X_n,
    Y(h) = int_0^h exp(P r) W exp(G r) dr.

Quadratic costs use ``S(h) = int_0^h exp(G' s) M exp(G s) ds``.  All
step matrices come from a doubling chain started at a step so short that
a block exponential is harmless::

    Y(2h) = Y(h) + exp(P h) Y(h) exp(G h)
    S(2h) = S(h) + exp(G' h) S(h) exp(G h)

so stiff fast blocks never see a growing exponential.  The only
approximate piece is the quadrature of the conjugate term theta, done by
Boole's rule with Simpson's rule as the error estimate.  Time-varying
coefficients are frozen at interval midpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla

from .problem_model import MeshMismatch, SpocProblem, Trajectory

__all__ = [
    "IntegratorConfig",
    "ToleranceNotMet",
    "ForwardSolution",
    "BackwardSolution",
    "integrate_forward",
    "integrate_dual_backward",
    "primal_functional",
    "dual_functional",
    "bound_mesh",
]


class ToleranceNotMet(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    order: str = "exponential/boole"
    max_refine: int = 6
    layer_rate: Optional[float] = None  # fast decay rate; computed when None

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")


# ---------------------------------------------------------------------------
# Step matrices
# ---------------------------------------------------------------------------

class _Chain:
    """Cached exp(Gh), exp(Ph), Y(h) and S_j(h) for fixed generators."""

    def __init__(self, G: np.ndarray, P: Optional[np.ndarray] = None,
                 W: Optional[np.ndarray] = None, quads: tuple = ()):
        self.G, self.P, self.W, self.quads = G, P, W, tuple(quads)
        norm = np.abs(G).sum(axis=1).max()
        if P is not None:
            norm = max(norm, np.abs(P).sum(axis=1).max())
        self.h_base = 0.125 / max(norm, 1e-300)
        self.cache: dict[float, tuple] = {}

    def _base(self, h: float):
        G, P, W = self.G, self.P, self.W
        na = G.shape[0]
        eG = sla.expm(G * h)
        S = []
        for M in self.quads:
            C = np.zeros((2 * na, 2 * na))
            C[:na, :na] = -G.T
            C[:na, na:] = M
            C[na:, na:] = G
            F = sla.expm(C * h)
            Sm = eG.T @ F[:na, na:]
            S.append(0.5 * (Sm + Sm.T))
        if P is None:
            return eG, None, None, tuple(S)
        d = P.shape[0]
        C = np.zeros((d + na, d + na))
        C[:d, :d] = -P
        C[:d, d:] = W
        C[d:, d:] = G
        F = sla.expm(C * h)
        eP = sla.expm(P * h)
        Y = eP @ F[:d, d:]
        return eG, eP, Y, tuple(S)

    def get(self, h: float):
        hit = self.cache.get(h)
        if hit is not None:
            return hit
        if h <= self.h_base:
            out = self._base(h)
        else:
            eG, eP, Y, S = self.get(0.5 * h)
            S2 = tuple(Sm + eG.T @ Sm @ eG for Sm in S)
            if eP is None:
                out = (eG @ eG, None, None, S2)
            else:
                out = (eG @ eG, eP @ eP, Y + eP @ Y @ eG, S2)
        self.cache[h] = out
        return out


def _stack(chain: _Chain, hs: np.ndarray, part: int):
    """Stacked step matrices for an array of step sizes."""
    uniq, inv = np.unique(hs, return_inverse=True)
    # steps equal up to round-off share one set of matrices
    keep = np.concatenate([[True], np.diff(uniq) > 1e-12 * uniq[1:]])
    group = np.cumsum(keep) - 1
    reps = uniq[keep]
    mats = np.stack([chain.get(float(h))[part] if part < 3 else chain.get(float(h))[3][part - 3]
                     for h in reps])
    return mats[group[inv]]


# ---------------------------------------------------------------------------
# Meshes for the bound evaluation
# ---------------------------------------------------------------------------

def bound_mesh(breaks: np.ndarray, eps: float, rate: float, refine: int = 0) -> np.ndarray:
    """Integration nodes: input breakpoints, end intervals split dyadically
    toward 0 and T down to a quarter decay length, then every interval cut
    into ``2**refine`` equal pieces."""
    breaks = np.asarray(breaks, float)
    M = breaks.size - 1
    parts = [breaks[:-1]]
    for n, toward_start in ((0, True), (M - 1, False)):
        a, b = breaks[n], breaks[n + 1]
        h = b - a
        J = int(np.clip(math.ceil(math.log2(max(4.0 * h * rate / eps, 1.0))), 0, 60))
        frac = 2.0 ** -np.arange(1, J + 1)
        parts.append(a + h * frac if toward_start else b - h * frac)
    parts.append(breaks[-1:])
    nodes = np.unique(np.concatenate(parts))
    if refine:
        f = np.linspace(0.0, 1.0, 2 ** refine + 1)[:-1]
        hs = np.diff(nodes)
        nodes = np.concatenate([(nodes[:-1, None] + hs[:, None] * f[None]).ravel(), nodes[-1:]])
    return nodes


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------

_F = (0.25, 0.5, 0.75)


@dataclass(eq=False)
class ForwardSolution:
    """State driven by a piecewise-linear control, in exact augmented form."""

    p: SpocProblem
    eps: float
    nodes: np.ndarray
    X: np.ndarray            # augmented state at the left end of each interval
    z: np.ndarray            # state at every node
    u: np.ndarray            # control at every node
    chains: list = field(repr=False, default_factory=list)
    chain_index: Optional[np.ndarray] = field(repr=False, default=None)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.nodes, {"z": self.z, "u": self.u})

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(eq=False)
class BackwardSolution:
    p: SpocProblem
    eps: float
    nodes: np.ndarray
    gamma: np.ndarray        # at every node
    gamma_q: np.ndarray      # at the quarter points of every interval, shape (M, 3, d)
    forcing: object = field(repr=False, default=None)

    @property
    def trajectory(self) -> Trajectory:
        return Trajectory(self.nodes, {"gamma": self.gamma})


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _generators(p: SpocProblem, eps: float, t: float):
    E = p.Ieps(eps)
    d, k = p.d, p.k
    na = d + 2 * k
    A = p.A(t, eps)
    G = np.zeros((na, na))
    G[:d, :d] = A / E[:, None]
    G[:d, d:d + k] = p.b(t, eps)
    G[d:d + k, d + k:] = np.eye(k)
    P = A.T / E[:, None]
    return E, G, P


def _state_chain(p, eps, t):
    E, G, P = _generators(p, eps, t)
    d, k = p.d, p.k
    na = G.shape[0]
    Q = p.Q(t, eps)
    R = np.diag(p.R(t, eps))
    Mz = np.zeros((na, na))
    Mz[:d, :d] = 0.5 * (Q + Q.T)
    Mu = np.zeros((na, na))
    Mu[d:d + k, d:d + k] = R
    W = np.zeros((d, na))
    W[:, :d] = Q / E[:, None]
    return _Chain(G, P, W, (Mz, Mu))


def _rate(p: SpocProblem, cfg: IntegratorConfig) -> float:
    if cfg.layer_rate is not None:
        return cfg.layer_rate
    from .transcription import layer_rate
    return layer_rate(p)


def _chains_for(nodes, build, time_varying: bool):
    if not time_varying:
        ch = build(0.0)
        return [ch], np.zeros(nodes.size - 1, dtype=int)
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    return [build(float(t)) for t in mids], np.arange(nodes.size - 1)


def _per_interval(chains, index, hs, part):
    if len(chains) == 1:
        return _stack(chains[0], hs, part)
    return np.stack([(chains[i].get(float(h))[part] if part < 3 else chains[i].get(float(h))[3][part - 3])
                     for i, h in zip(index, hs)])


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _pl_slopes(mesh: np.ndarray, vals: np.ndarray, nodes: np.ndarray):
    """Values and right-slopes of a piecewise-linear channel at ``nodes``."""
    seg = np.clip(np.searchsorted(mesh, nodes, side="right") - 1, 0, mesh.size - 2)
    slope = (vals[seg + 1] - vals[seg]) / (mesh[seg + 1] - mesh[seg])[:, None]
    value = vals[seg] + (nodes - mesh[seg])[:, None] * slope
    return value, slope


def integrate_forward(p: SpocProblem, eps: float, u: Trajectory, z0=None,
                      cfg: IntegratorConfig | None = None, refine: int = 0,
                      _nodes: Optional[np.ndarray] = None) -> ForwardSolution:
    """Solve ``E z' = A z + E b u``, ``z(0) = z0``, for a piecewise-linear ``u``."""
    cfg = cfg or IntegratorConfig()
    if not eps > 0:
        raise ValueError("eps must be positive")
    umesh = u.mesh
    if abs(umesh[0]) > 1e-12 * p.T or abs(umesh[-1] - p.T) > 1e-12 * p.T:
        raise MeshMismatch("control must be defined on [0, T]")
    uvals = u["u"]
    nodes = _nodes if _nodes is not None else bound_mesh(umesh, eps, _rate(p, cfg), refine)
    d, k = p.d, p.k
    chains, index = _chains_for(nodes, lambda t: _state_chain(p, eps, t), p.time_varying)
    hs = np.diff(nodes)
    uv, slope = _pl_slopes(umesh, uvals, nodes[:-1])
    M = hs.size
    eG = _per_interval(chains, index, hs, 0)
    X = np.empty((M, d + 2 * k))
    X[:, d:d + k] = uv
    X[:, d + k:] = slope
    z = np.empty((M + 1, d))
    z[0] = p.z0 if z0 is None else np.asarray(z0, float)
    eGz = eG[:, :d, :]
    for n in range(M):
        X[n, :d] = z[n]
        z[n + 1] = eGz[n] @ X[n]
    uend = np.vstack([uv, uvals[-1:]])
    return ForwardSolution(p, float(eps), nodes, X, z, uend, chains, index)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------

def _pl_forcing(p, eps, rho: Trajectory, nodes):
    """Driving signal for a piecewise-linear rho channel: X = [rho; rho']."""
    d = p.d
    E = p.Ieps(eps)
    val, slope = _pl_slopes(rho.mesh, rho["rho"], nodes[:-1])
    X = np.hstack([val, slope])
    G = np.zeros((2 * d, 2 * d))
    G[:d, d:] = np.eye(d)
    W = np.zeros((d, 2 * d))
    W[:, :d] = np.diag(1.0 / E)

    def build(t):
        _, _, P = _generators(p, eps, t)
        return _Chain(G, P, W)

    chains, index = _chains_for(nodes, build, p.time_varying)
    return X, chains, index


def integrate_dual_backward(p: SpocProblem, eps: float, rho: Union[ForwardSolution, Trajectory],
                            gammaT, cfg: IntegratorConfig | None = None) -> BackwardSolution:
    """Solve ``E gamma' = -A' gamma + rho`` backward from ``gamma(T) = gammaT``.

    ``rho`` is either a :class:`ForwardSolution`, meaning ``rho = Q z`` for
    that state (handled exactly), or a trajectory with a piecewise-linear
    ``rho`` channel.
    """
    cfg = cfg or IntegratorConfig()
    if isinstance(rho, ForwardSolution):
        nodes, X, chains, index = rho.nodes, rho.X, rho.chains, rho.chain_index
        if abs(rho.eps - eps) > 0:
            raise ValueError("forward solution was computed at a different eps")
    else:
        nodes = bound_mesh(rho.mesh, eps, _rate(p, cfg))
        X, chains, index = _pl_forcing(p, eps, rho, nodes)
    hs = np.diff(nodes)
    M = hs.size
    eP = _per_interval(chains, index, hs, 1)
    Y = _per_interval(chains, index, hs, 2)
    YX = np.einsum("nij,nj->ni", Y, X)
    g = np.empty((M + 1, p.d))
    g[-1] = np.asarray(gammaT, float)
    for n in range(M - 1, -1, -1):
        g[n] = eP[n] @ g[n + 1] - YX[n]
    # quarter points: gamma(t_n + f h) = exp(P(1-f)h) gamma_{n+1} - Y((1-f)h) X(t_n + f h)
    gq = np.empty((M, 3, p.d))
    for j, f in enumerate(_F):
        eGf = _per_interval(chains, index, f * hs, 0)
        Xf = np.einsum("nij,nj->ni", eGf, X)
        ePr = _per_interval(chains, index, (1 - f) * hs, 1)
        Yr = _per_interval(chains, index, (1 - f) * hs, 2)
        gq[:, j] = np.einsum("nij,nj->ni", ePr, g[1:]) - np.einsum("nij,nj->ni", Yr, Xf)
    return BackwardSolution(p, float(eps), nodes, g, gq, rho)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

def _pl_quadratic(t, x, M):
    """Exact integral of x(t)' M(t) x(t) for piecewise-linear x and M frozen per node pair."""
    h = np.diff(t)
    a, b = x[:-1], x[1:]
    Ma, Mb = M[:-1], M[1:]
    Mm = 0.5 * (Ma + Mb)
    qa = np.einsum("ni,nij,nj->n", a, Mm, a)
    qb = np.einsum("ni,nij,nj->n", b, Mm, b)
    qab = np.einsum("ni,nij,nj->n", a, Mm, b)
    return float(np.sum(h * (qa + qb + qab) / 3.0))


def _sample_mats(fn, t, const):
    if const:
        v = fn(0.0)
        return np.broadcast_to(v, (t.size,) + v.shape)
    return np.stack([fn(s) for s in t])


def primal_functional(z: Union[ForwardSolution, Trajectory], u: Optional[Trajectory], eps: float,
                      p: SpocProblem, cfg: IntegratorConfig | None = None) -> float:
    """``1/2 int z'Qz + u'Ru dt + 1/2 z(T)' pi z(T)``.

    Exact for a :class:`ForwardSolution`; for plain trajectories the
    channels are integrated as piecewise-linear functions.
    """
    if isinstance(z, ForwardSolution):
        hs = z.h
        S = (_per_interval(z.chains, z.chain_index, hs, 3)
             + _per_interval(z.chains, z.chain_index, hs, 4))
        run = float(np.einsum("ni,nij,nj->", z.X, S, z.X))
        zT = z.z[-1]
        return 0.5 * (run + float(zT @ p.pi(eps) @ zT))
    if u is None:
        raise ValueError("control channel required")
    if not z.same_mesh(u):
        raise MeshMismatch("state and control must share a mesh")
    t = z.mesh
    const = not p.time_varying
    Q = _sample_mats(lambda s: p.Q(s, eps), t, const)
    R = _sample_mats(lambda s: np.diag(p.R(s, eps)), t, const)
    zz, uu = z["z"], u["u"]
    run = _pl_quadratic(t, zz, Q) + _pl_quadratic(t, uu, R)
    return 0.5 * (run + float(zz[-1] @ p.pi(eps) @ zz[-1]))


def _theta_rows(p: SpocProblem, eps: float, t: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    from .dual_model import theta_many
    return theta_many(p, eps, t, gamma)


def dual_functional(rho, gamma, eps: float, p: SpocProblem,
                    cfg: IntegratorConfig | None = None, *, with_error: bool = False):
    """``int -1/2 rho'Q^{-1}rho - theta(gamma) dt - gamma(0)'E z0
    - 1/2 gamma(T)' E pi^{-1} E gamma(T)``.

    With a :class:`BackwardSolution` (driven by a :class:`ForwardSolution`)
    the quadratic term is exact and theta uses Boole's rule on quarter
    points.  With plain trajectories everything is piecewise-linear and
    theta uses Simpson's rule on interval midpoints.
    """
    from .dual_model import boundary_terms
    if isinstance(gamma, BackwardSolution):
        fw = gamma.forcing
        if not isinstance(fw, ForwardSolution):
            raise ValueError("exact dual evaluation needs rho = Q z from a forward solution")
        hs = np.diff(gamma.nodes)
        Sz = _per_interval(fw.chains, fw.chain_index, hs, 3)
        quad = -0.5 * float(np.einsum("ni,nij,nj->", fw.X, Sz, fw.X))
        t = gamma.nodes
        th_nodes = _theta_rows(p, eps, t, gamma.gamma)
        tq = t[:-1, None] + hs[:, None] * np.array(_F)[None]
        th_q = _theta_rows(p, eps, tq.ravel(), gamma.gamma_q.reshape(-1, p.d)).reshape(-1, 3)
        f0, f4 = th_nodes[:-1], th_nodes[1:]
        f1, f2, f3 = th_q[:, 0], th_q[:, 1], th_q[:, 2]
        boole = hs / 90.0 * (7 * f0 + 32 * f1 + 12 * f2 + 32 * f3 + 7 * f4)
        simpson = hs / 6.0 * (f0 + 4 * f2 + f4)
        theta_int = float(np.sum(boole))
        err = float(np.sum(np.abs(boole - simpson)))
        val = quad - theta_int + boundary_terms(p, eps, gamma.gamma[0], gamma.gamma[-1])
        return (val, err) if with_error else val

    rho_t, gamma_t = rho, gamma
    if not rho_t.same_mesh(gamma_t):
        raise MeshMismatch("rho and gamma must share a mesh")
    t = rho_t.mesh
    const = not p.time_varying
    Qinv = _sample_mats(lambda s: np.linalg.inv(p.Q(s, eps)), t, const)
    r = rho_t["rho"]
    g = gamma_t["gamma"]
    quad = -0.5 * _pl_quadratic(t, r, Qinv)
    tm = 0.5 * (t[:-1] + t[1:])
    gm = 0.5 * (g[:-1] + g[1:])
    th = _theta_rows(p, eps, t, g)
    thm = _theta_rows(p, eps, tm, gm)
    hs = np.diff(t)
    simpson = hs / 6.0 * (th[:-1] + 4 * thm + th[1:])
    trap = hs / 2.0 * (th[:-1] + th[1:])
    val = quad - float(np.sum(simpson)) + boundary_terms(p, eps, g[0], g[-1])
    err = float(np.sum(np.abs(simpson - trap)))
    return (val, err) if with_error else val
