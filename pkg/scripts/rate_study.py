"""How fast do the gap and the control error shrink with eps?

Part 1 fits log(gap) against log(eps) on generated problems, once against
eps and once against eps^2.  Part 2 measures max|u(eps) - ubar| on
example1 over a range reaching well below the boundary-layer transient.
    python3 scripts/rate_study.py [--count 20]
"""
import argparse

import numpy as np

from spoc.bounds import SweepOptions, fit_slope, sweep
from spoc.cli import load
from spoc.generator import GenConfig, generate
from spoc.reduction import reduce
from spoc.transcription import build_mesh, problem_mesh, solve, transcribe_primal, transcribe_reduced

EPS = [1e-1, 1e-2, 1e-3, 1e-4]


def gap_rates(count):
    opts = SweepOptions(nodes=200, solve_primal=False, solve_dual=False)
    slopes = []
    for p in generate(GenConfig(seed=7, count=count)):
        rep = sweep(p, EPS, opts)
        gaps = [r.gap for r in rep.rows]
        slopes.append(rep.slope)
        ratio = [g / e ** 2 for g, e in zip(gaps, EPS)]
        print(f"{p.name:>8}: slope {rep.slope:5.2f}  gap/eps^2 " + " ".join(f"{x:9.3g}" for x in ratio))
    s = np.array(slopes)
    print(f"median slope {np.median(s):.2f}; share in [0.8, 1.2]: {np.mean((s >= 0.8) & (s <= 1.2)):.0%}; "
          f"share in [1.8, 2.2]: {np.mean((s >= 1.8) & (s <= 2.2)):.0%}")


def control_rates():
    p = load("example1")
    red = solve(transcribe_reduced(reduce(p), build_mesh(p.T, 0.0, 1600)))
    tb, ub = red.trajectory.mesh, red.trajectory["u"]
    for eps_list in ([1e-1, 3e-2, 1e-2, 3e-3], [1e-3, 3e-4, 1e-4, 3e-5]):
        dist = []
        for eps in eps_list:
            res = solve(transcribe_primal(p, eps, problem_mesh(p, eps, 1600)))
            t, u = res.trajectory.mesh, res.trajectory["u"]
            ui = np.column_stack([np.interp(t, tb, ub[:, j]) for j in range(p.k)])
            dist.append(float(np.max(np.abs(u - ui))))
        print("eps " + " ".join(f"{e:8.0e}" for e in eps_list) + "  max|u-ubar| "
              + " ".join(f"{d:8.3g}" for d in dist) + f"  slope {fit_slope(eps_list, dist):.2f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=20)
    args = ap.parse_args()
    gap_rates(args.count)
    control_rates()


if __name__ == "__main__":
    main()
