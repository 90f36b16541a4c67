"""Rebuild the two built-in fixtures from the reference listings.

Entries the source tables leave out are filled as described in
src/spoc/fixtures/PROVENANCE.md.  Run from the repository root; the output
is byte-identical to the committed files.
"""
from pathlib import Path

import numpy as np

from spoc.problem_model import make_problem, save_problem

OUT = Path(__file__).resolve().parents[1] / "src" / "spoc" / "fixtures"


def example1():
    # coefficients read off the dual dynamics display; fast rows carry the factor 1/30
    return make_problem(
        T=60, eps_star=1 / 30, z0=[1.55, 0.2, 9, 15],
        A11=[[-0.015, -0.0805], [0, 0]], A12=[[-0.035 / 30, 0], [0, 1 / 30]],
        A21=[[-0.076, 0], [0.02, 0]], A22=[[-0.028, 1 / 30], [-0.16, -0.49 / 30]],
        b1=[[-0.00009, 0.02225], [0, 0]], b2=[[-0.11, 0], [-8.7, 0]], Q=np.eye(4), R=[1, 1],
        pi11=np.eye(2), pi22=np.eye(2), alpha=[0, 0], beta=[1, 1], name="example1")


def example2():
    z0 = [-0.437, 0.940, -0.8180, 0.138, 0.7070, 0.054, 0.965, 0.665, 0.130, 0.292]
    A11 = [[0.905, 0.289, -0.209, -0.226], [-0.696, 0.973, -0.194, -0.706],
           [-0.806, -0.622, -0.868, 0.198], [-0.988, -0.407, 0.469, 0.026]]
    A12 = [[-0.210, -0.774, -0.687, 0.208, -0.131, -0.693],
           [-0.376, -0.095, 0.043, 0.817, -0.500, -0.406],
           [-0.305, -0.627, 0.136, -0.103, 0.920, -0.764],
           [0, 0, 0, 0, 0, 0]]                                   # missing row
    A21 = [[0.566, -0.121, -0.784, -0.649], [-0.344, -0.954, 0.855, -0.393],
           [0.1756, -0.742, -0.837, 0.622], [0.792, -0.581, -0.174, -0.124],
           [0.558, -0.481, -0.363, -0.147], [0.226, 0.146, -0.447, -0.533]]
    d = np.mean([-2.380, -2.388, -3.085, -1.045, -1.943])       # missing diagonal entry
    A22 = [[-2.380, -0.773, 0.674, -1.261, -0.144, 0.280],
           [-0.773, d, 1.163, -0.003, -0.603, 1.676],            # reconstructed row
           [-0.674, 1.163, -2.388, 1.099, -0.506, -0.614],
           [-1.261, -0.003, 1.099, -3.085, 0.777, -0.711],
           [-0.144, -0.603, -0.566, 0.777, -1.045, 1.030],
           [0.280, 1.676, -0.614, -0.711, 1.030, -1.943]]
    b1 = [[-0.467, -0.302, -0.886], [0.768, -0.261, -0.374], [0.936, -0.472, 0.140], [0, 0, 0]]
    b2 = [[0.945, 0.166, -0.266], [0.0198, -0.917, 0.047], [0.890, -0.037, 0.390],
          [0.288, 0.111, -0.366], [0.066, 0.164, 0.279], [-0.571, 0.889, -0.049]]
    pi11 = [[1.661, -0.492, 0.467, -0.571], [-0.492, 1.403, 0.509, 0.689],
            [0.467, 0.509, 0.908, -0.049], [-0.571, 0.689, -0.049, 1.42]]
    p22 = np.array([
        [2.695, 1.886, 0.342, 1.018, -1.920, -0.792],
        [1.886, 2.136, -0.724, 1.051, -1.140, -0.525],
        [0.342, -0.723, 2.109, -0.488, -0.597, 0.973],
        [1.018, 1.051, -0.488, np.mean([2.695, 2.136, 2.109, 2.324, 2.289]), -0.492, -1.093],
        [-1.920, -1.140, -0.597, -0.492, 2.324, 0.484],
        [-0.792, -0.525, 0.973, -1.093, 0.484, 2.289]])
    pi22 = 0.5 * (p22 + p22.T)
    rows = np.array([
        [4.334, 2.848, 0.617, -0.611, -0.104, 0.730, 0.679, -1.793, 1.870, 0.445],
        [2.848, 3.008, 0.714, -1.246, 0.822, 0.157, 0.279, -0.868, 1.316, -0.550],
        [0.617, 0.714, 5.423, 0.292, 2.128, 1.009, 0.371, -2.352, 2.926, -1.511],
        [-0.611, -1.246, 0.292, 3.898, -0.026, 0.589, -1.184, -2.039, -0.119, 0.749],
        [-0.104, 0.822, 2.128, -0.026, 2.643, 0.029, 0.227, -1.541, 1.125, -0.676],
        [0.730, 0.157, 1.009, 0.589, 0.029, 4.287, 0.652, -0.367, 1.341, 1.589]])
    # last four rows of Q are lost: mirror the coupling, complete the corner as a Schur shift
    Q = np.zeros((10, 10))
    Q[:6] = rows
    Q[6:, :6] = rows[:, 6:].T
    Qa, Qb = rows[:, :6], rows[:, 6:]
    Q[6:, 6:] = Qb.T @ np.linalg.solve(Qa, Qb) + np.eye(4)
    Q = 0.5 * (Q + Q.T)
    return make_problem(T=0.5, eps_star=1.0, z0=z0, A11=A11, A12=A12, A21=A21, A22=A22, b1=b1,
                        b2=b2, Q=Q, R=[1, 1, 1], pi11=pi11, pi22=pi22,
                        alpha=[2.775, 3.441, 3.485], beta=[5.105, 6.470, 5.981], name="example2")


if __name__ == "__main__":
    for p in (example1(), example2()):
        path = OUT / f"{p.name}.json"
        text = save_problem(p)
        same = path.exists() and path.read_text() == text
        path.write_text(text)
        print(f"{path} {'unchanged' if same else 'written'}")
