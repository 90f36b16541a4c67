import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spoc.dual_model import (DualProblem, ResidualTooLarge, clamp_projection,
                             construct_dual_from_primal, dual_dynamics_rhs, dual_objective, theta)
from spoc.ode_eval import integrate_forward, primal_functional
from spoc.problem_model import Trajectory
from spoc.transcription import problem_mesh, solve, transcribe_primal

from conftest import scalar_problem


def grid_sup(s, R, lo, hi, n=10_001):
    """max over a u-grid of s u - R u^2 / 2, per component."""
    u = np.linspace(lo, hi, n).T
    return np.sum(np.max(s[:, None] * u - 0.5 * R[:, None] * u * u, axis=1))


def test_clamp_interior_is_identity(ex2):
    s = np.array([3.0, 4.0, 4.0])
    np.testing.assert_array_equal(clamp_projection(s, 0.0, 1e-3, ex2), s)


def test_clamp_below_box(ex2):
    assert clamp_projection(np.array([-10.0, 4.0, 4.0]), 0.0, 1e-3, ex2)[0] == 2.775


def test_clamp_primal_sign(ex2):
    s = np.array([-3.0, -4.0, -4.0])
    np.testing.assert_array_equal(clamp_projection(s, 0.0, 1e-3, ex2, sign="primal"), -s)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_clamp_is_hamiltonian_argmin(sv):
    p = scalar_problem()
    from spoc.problem_model import load_problem  # noqa: F401
    lo, hi = np.array([2.775, 3.441, 3.485]), np.array([5.105, 6.470, 5.981])
    s = np.array(sv)
    grid = np.linspace(lo, hi, 10_001)
    # argmin of 1/2 u^2 - s u over the grid (R = I)
    best = grid[np.argmin(0.5 * grid ** 2 - s * grid, axis=0), np.arange(3)]
    got = np.clip(s, lo, hi)
    np.testing.assert_allclose(got, best, atol=(hi - lo).max() / 10_000)


def test_theta_zero_interior(ex1):
    # Example 1 box is [0, 1]: 0 sits on the boundary and the value is still 0
    assert theta(np.zeros(4), 0.0, 0.01, ex1) == 0.0


def test_theta_zero_with_positive_alpha(ex2):
    R = ex2.R(0, 0)
    alpha = ex2.box(0)[0]
    assert theta(np.zeros(10), 0.0, 0.01, ex2) == pytest.approx(np.sum(-0.5 * alpha ** 2 * R))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_theta_is_conjugate(seed):
    from spoc.cli import load
    rng = np.random.default_rng(seed)
    for p in (load("example1"), load("example2")):
        g = rng.normal(scale=5.0, size=p.d)
        t, eps = rng.uniform(0, p.T), 10 ** rng.uniform(-5, 0)
        s = p.b(t, eps).T @ (p.Ieps(eps) * g)
        lo, hi = p.box(t)
        assert theta(g, t, eps, p) == pytest.approx(grid_sup(s, p.R(t, eps), lo, hi), abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_theta_midpoint_convex(seed):
    from spoc.cli import load
    p = load("example2")
    rng = np.random.default_rng(seed)
    a, b = rng.normal(scale=30, size=(2, p.d))
    mid = theta(0.5 * (a + b), 0.1, 0.05, p)
    assert mid <= 0.5 * (theta(a, 0.1, 0.05, p) + theta(b, 0.1, 0.05, p)) + 1e-9


def test_theta_c1_at_kink(ex2):
    # move gamma along a direction so that s_1 / R_11 crosses alpha_1
    eps, t = 0.5, 0.0
    B = ex2.b(t, eps).T * ex2.Ieps(eps)
    d = np.linalg.lstsq(B, np.array([1.0, 0.0, 0.0]), rcond=None)[0]
    g0 = d * ex2.box(t)[0][0] * ex2.R(t, eps)[0]
    h = 1e-6
    f = lambda x: theta(g0 + x * d, t, eps, ex2)
    left = (f(0) - f(-h)) / h
    right = (f(h) - f(0)) / h
    assert left == pytest.approx(right, abs=1e-4)


def test_rhs_equilibrium_and_linearity(ex1):
    g = np.array([1.0, -2.0, 0.5, 3.0])
    rho = ex1.A(0, 0.01).T @ g
    np.testing.assert_allclose(dual_dynamics_rhs(g, rho, 0.0, 0.01, ex1), 0, atol=1e-15)
    np.testing.assert_array_equal(dual_dynamics_rhs(np.zeros(4), rho, 0.0, 0.01, ex1), rho)


def test_example1_dual_row(ex1):
    e = np.eye(4)
    row = lambda j: dual_dynamics_rhs(e[j], np.zeros(4), 0.0, 0.01, ex1)[0]
    assert row(0) == pytest.approx(0.015)
    assert row(2) == pytest.approx(0.076)


def test_zero_channels_give_zero(ex1):
    t = np.linspace(0, ex1.T, 11)
    z = Trajectory(t, {"rho": np.zeros((11, 4))})
    g = Trajectory(t, {"gamma": np.zeros((11, 4))})
    assert dual_objective(z, g, 0.01, ex1) == 0.0


def _primal_pair(p, eps, N=400):
    res = solve(transcribe_primal(p, eps, problem_mesh(p, eps, N)))
    tr = res.trajectory
    return res, tr.channel("z"), tr.channel("chi")


def test_constructed_pair_matches_primal_example1(ex1):
    eps = 1 / 30
    diffs = []
    for N in (800, 1600):
        res, z, chi = _primal_pair(ex1, eps, N)
        pair = construct_dual_from_primal(z, chi, eps, ex1)
        JD = dual_objective(pair.channel("rho"), pair.channel("gamma"), eps, ex1)
        diffs.append(abs(JD - res.objective))
    assert diffs[-1] / abs(res.objective) <= 1e-4
    # the mismatch is a second-order quadrature effect
    assert 3.0 <= diffs[0] / diffs[1] <= 5.0


def test_constructed_pair_scalar_closed_form():
    from conftest import decoupled_value
    p = scalar_problem()
    eps = 0.5
    res, z, chi = _primal_pair(p, eps, N=1600)
    pair = construct_dual_from_primal(z, chi, eps, p)
    JD = dual_objective(pair.channel("rho"), pair.channel("gamma"), eps, p)
    exact = decoupled_value(eps)
    assert JD == pytest.approx(exact, rel=1e-5)
    assert res.objective == pytest.approx(exact, rel=1e-5)


def test_zero_problem_triple():
    p = scalar_problem(z0=(0.0, 0.0))
    t = np.linspace(0, 1, 21)
    zero = np.zeros((21, 2))
    pair = construct_dual_from_primal(Trajectory(t, {"z": zero}), Trajectory(t, {"chi": zero}), 0.1, p)
    assert not any(pair[c].any() for c in ("gamma", "mu", "rho"))
    assert dual_objective(pair.channel("rho"), pair.channel("gamma"), 0.1, p) == 0.0


def test_garbage_costate_rejected(ex1):
    t = np.linspace(0, ex1.T, 41)
    rng = np.random.default_rng(0)
    z = Trajectory(t, {"z": rng.normal(size=(41, 4))})
    chi = Trajectory(t, {"chi": rng.normal(size=(41, 4))})
    with pytest.raises(ResidualTooLarge):
        construct_dual_from_primal(z, chi, 0.1, ex1)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 1.0), st.floats(-0.5, 0.5))
def test_weak_duality(c1, c2, eps, uconst):
    """Any dual-feasible pair sits below any primal-feasible cost."""
    p = scalar_problem(a21=0.3, b2=0.7, alpha=-0.5, beta=0.5)
    t = np.linspace(0, 1, 2001)
    # gamma smooth and explicit, rho from the dual dynamics
    g = np.stack([c1 * np.cos(t), c2 * np.sin(2 * t)], axis=1)
    dg = np.stack([-c1 * np.sin(t), 2 * c2 * np.cos(2 * t)], axis=1)
    rho = dg * p.Ieps(eps) + g @ p.A(0, eps)
    JD = dual_objective(Trajectory(t, {"rho": rho}), Trajectory(t, {"gamma": g}), eps, p)
    u = Trajectory(np.array([0.0, 1.0]), {"u": np.full((2, 1), uconst)})
    JP = primal_functional(integrate_forward(p, eps, u), None, eps, p)
    assert JD <= JP + 1e-6


def test_dual_problem_requires_spd(ex1):
    from spoc.problem_model import CoeffMatrix
    with pytest.raises(np.linalg.LinAlgError):
        DualProblem(ex1.replace(pi11=CoeffMatrix.constant(-np.eye(2))))
