import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spoc.generator import GenConfig, generate_one
from spoc.problem_model import CoeffMatrix, Trajectory
from spoc.reduction import SingularA22, boundary_layers, recover_fast_outer, reduce
from spoc.transcription import build_mesh, solve, transcribe_reduced


def test_decoupled_blocks(ex2):
    # A21 = 0 as well: otherwise the outer fast state still costs Q22
    p = ex2.replace(A12=CoeffMatrix.constant(np.zeros((4, 6))),
                    A21=CoeffMatrix.constant(np.zeros((6, 4))),
                    Q12=CoeffMatrix.constant(np.zeros((4, 6))),
                    Q21=CoeffMatrix.constant(np.zeros((6, 4))))
    rp = reduce(p)
    np.testing.assert_allclose(rp.Acal(0), p.A11(0, 0), atol=1e-14)
    np.testing.assert_allclose(rp.Qcal(0), p.Q11(0, 0), atol=1e-14)


def test_example1_reduced_dynamics(ex1):
    A11, A12, A21, A22 = (np.array(ex1.__getattribute__(k)(0, 0)) for k in ("A11", "A12", "A21", "A22"))
    # explicit 2x2 inverse keeps the oracle away from LAPACK
    a, b, c, d = A22.ravel()
    inv = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
    np.testing.assert_allclose(reduce(ex1).Acal(0), A11 - A12 @ inv @ A21, rtol=1e-12)


def test_example2_qcal_symmetric_psd(ex2):
    Qc = reduce(ex2).Qcal(0)
    assert np.max(np.abs(Qc - Qc.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(Qc)) >= -1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_qcal_is_congruence(seed):
    p = generate_one(GenConfig(m=3, n=2, k=1, seed=seed, count=1), 0)
    A22, A21 = p.A22(0, 0), p.A21(0, 0)
    X = -np.linalg.solve(A22, A21)
    K = np.vstack([np.eye(3), X])
    np.testing.assert_allclose(reduce(p).Qcal(0), K.T @ p.Q(0, 0) @ K, rtol=1e-9, atol=1e-12)


def test_eps_tail_does_not_matter(ex1):
    data = np.zeros((1, 2, 2, 2))
    data[0, 0] = ex1.A11(0, 0)
    data[0, 1] = [[5.0, -3.0], [7.0, 1.0]]
    tail = ex1.replace(A11=CoeffMatrix(data))
    np.testing.assert_allclose(reduce(tail).Acal(0), reduce(ex1).Acal(0))


def test_singular_a22(ex1):
    with pytest.raises(SingularA22):
        reduce(ex1.replace(A22=CoeffMatrix.constant(np.zeros((2, 2)))))


def test_recover_homogeneous(ex2):
    z2o, chi2o = recover_fast_outer(reduce(ex2), ex2, np.zeros(4), np.zeros(4), 0.1)
    assert not z2o.any() and not chi2o.any()


def test_recover_zero_coupling(ex2):
    p = ex2.replace(A21=CoeffMatrix.constant(np.zeros((6, 4))),
                    Q21=CoeffMatrix.constant(np.zeros((6, 4))),
                    Q12=CoeffMatrix.constant(np.zeros((4, 6))))
    chi1 = np.arange(1.0, 5.0)
    z2o, chi2o = recover_fast_outer(reduce(p), p, np.ones(4), chi1, 0.0)
    np.testing.assert_allclose(z2o, 0, atol=1e-14)
    np.testing.assert_allclose(chi2o, -np.linalg.solve(p.A22(0, 0).T, p.A12(0, 0).T @ chi1))


def test_recover_matches_linear_solve(ex2):
    x = ex2.z0[:4]
    chi1 = np.array([0.3, -1.0, 2.0, 0.5])
    z2o, chi2o = recover_fast_outer(reduce(ex2), ex2, x, chi1, 0.0)
    # both algebraic rows as one 12x12 system
    A21, A22, A12 = ex2.A21(0, 0), ex2.A22(0, 0), ex2.A12(0, 0)
    Q21, Q22 = ex2.Q21(0, 0), ex2.Q22(0, 0)
    M = np.block([[A22, np.zeros((6, 6))], [Q22, A22.T]])
    rhs = -np.concatenate([A21 @ x, Q21 @ x + A12.T @ chi1])
    ref = np.linalg.solve(M, rhs)
    np.testing.assert_allclose(np.concatenate([z2o, chi2o]), ref, rtol=1e-12, atol=1e-12)


def _outer(p, z_start, z_end, chi_end):
    return Trajectory(np.array([0.0, p.T]), {"z": np.array([z_start, z_end]),
                                             "chi": np.array([np.zeros(p.d), chi_end])})


def test_initial_layer_vanishes_when_matched(scalar):
    p = scalar(a21=0.4)
    z = np.array([1.0, 1.0])
    lt = boundary_layers(p, _outer(p, z, z, np.zeros(2)))
    np.testing.assert_allclose(lt.z2i, 0)


def test_scalar_initial_layer_closed_form(scalar):
    p = scalar(a22=-2.0, z0=(1.0, 3.0))
    outer_start = np.array([1.0, 0.5])
    lt = boundary_layers(p, _outer(p, outer_start, outer_start, np.zeros(2)))
    np.testing.assert_allclose(lt.z2i[:, 0], 2.5 * np.exp(-2.0 * lt.tau), rtol=1e-10, atol=1e-14)


def _reduced_outer(p):
    rp = reduce(p)
    res = solve(transcribe_reduced(rp, build_mesh(p.T, 0.0, 400)))
    t, x, chi = res.trajectory.mesh, res.trajectory["z"], res.trajectory["chi"]
    z, c = [], []
    for i in (0, -1):
        z2o, chi2o = recover_fast_outer(rp, p, x[i], chi[i], t[i])
        z.append(np.concatenate([x[i], z2o]))
        c.append(np.concatenate([chi[i], chi2o]))
    return Trajectory(t[[0, -1]], {"z": np.array(z), "chi": np.array(c)})


def test_example1_layer_decay_rate(ex1):
    lt = boundary_layers(ex1, _reduced_outer(ex1))
    mag = np.linalg.norm(lt.z2i, axis=1)
    tail = lt.tau > 0.25 * lt.tau[-1]
    fitted = -np.polyfit(lt.tau[tail], np.log(mag[tail]), 1)[0]
    abscissa = -np.max(np.linalg.eigvals(ex1.A22(0, 0)).real)
    assert fitted == pytest.approx(abscissa, rel=0.1)


def test_layer_envelopes_decay(ex2):
    lt = boundary_layers(ex2, _reduced_outer(ex2))
    for arr in (lt.z2i, lt.chi2i, lt.chi2f):
        mag = np.linalg.norm(arr, axis=1)
        half = mag.size // 2
        assert mag[half:].max() <= mag[:half].max()
