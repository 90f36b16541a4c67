"""Timing of bounds against direct primal and dual solves on a generated suite.

Generates problems (m=4, n=6, k=3, T=0.5) and runs the sweep-suite command;
summary CSVs land in results/suite.  Without --extrapolate the direct
solves carry an O(h^2) transcription error far above the sandwich slack, so
the sandwich_pass_rate column is only meaningful with it (times then cover
two meshes).
    python3 scripts/suite_timing.py [--count 50] [--seed 7] [--workers 1] [--extrapolate]
"""
import argparse

from spoc.cli import main as cli

EPS = "1,1e-1,1e-2,1e-3,1e-4,1e-5"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--extrapolate", action="store_true")
    ap.add_argument("--out", default="results/suite")
    args = ap.parse_args()
    probs = f"{args.out}/problems"
    cli(["generate", "--count", str(args.count), "--seed", str(args.seed), "--out", probs])
    extra = ["--extrapolate"] if args.extrapolate else []
    return cli(["sweep-suite", probs, "--eps", EPS, "--workers", str(args.workers), "--out", args.out, *extra])


if __name__ == "__main__":
    raise SystemExit(main())
