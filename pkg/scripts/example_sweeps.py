"""Bounds, primal, dual and reduced values for both fixtures over an eps sweep.

Writes results/<name>_bounds.csv and prints one line per row.
    python3 scripts/example_sweeps.py [--nodes 400] [--out results]
"""
import argparse
from pathlib import Path

from spoc.bounds import SweepOptions, sweep
from spoc.cli import load

EPS = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nodes", type=int, default=400)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)
    for name in ("example1", "example2"):
        rep = sweep(load(name), EPS, SweepOptions(nodes=args.nodes, extrapolate=True))
        (out / f"{name}_bounds.csv").write_text(rep.to_csv())
        C = "n/a" if rep.C is None else f"{rep.C:.4g}"
        print(f"{name}: V_reduced={rep.V_reduced:.6f} C={C} slope={rep.slope:.3f}")
        print(f"  {'eps':>8} {'chi_u':>14} {'chi_l':>14} {'V_primal':>14} {'gap':>10} "
              f"{'gap/eps^2':>10} {'t_b ms':>7} {'t_d ms':>7} {'t_p ms':>7} status")
        for r in rep.rows:
            print(f"  {r.eps:8.0e} {r.chi_upper:14.8f} {r.chi_lower:14.8f} {r.V_primal:14.8f} "
                  f"{r.gap:10.3e} {r.gap / r.eps ** 2:10.3e} {1e3 * r.t_bounds:7.1f} "
                  f"{1e3 * r.t_dual:7.1f} {1e3 * r.t_primal:7.1f} {r.status}")


if __name__ == "__main__":
    main()
