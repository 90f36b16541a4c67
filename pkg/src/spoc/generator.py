"""Seeded random problem instances.

Each index draws from its own Philox stream keyed by ``(seed, index)``,
so problem ``i`` does not depend on how many others were generated.

Recipe (constant coefficients)::

    Q, pi11, pi22 = M M' + delta I        (M entries uniform in [-s, s])
    R_jj          uniform in [delta, 1 + delta]
    A22           = -(N N' + delta I) + (S - S')/2
    A11, A12, A21, b1, b2, z0 entries uniform in [-1, 1]
    alpha_j       uniform in alpha_range, beta_j = alpha_j + width_j

``A22`` draws whose condition number exceeds ``cond_cap`` are redrawn.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .problem_model import SpocProblem, make_problem, save_problem

__all__ = ["GenConfig", "GenerationFailed", "generate", "generate_one", "write_problems"]


class GenerationFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    m: int = 4
    n: int = 6
    k: int = 3
    T: float = 0.5
    seed: int = 0
    count: int = 50
    entry_scale: float = 1.0
    delta: float = 0.5
    width_range: tuple = (0.5, 1.5)
    alpha_range: tuple = (-1.0, 0.0)
    eps_star: float = 1.0
    cond_cap: float = 1e3
    max_retries: int = 100
    prefix: str = "gen"

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValueError("dimensions must be at least 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.count < 0:
            raise ValueError("count must be non-negative")
        lo, hi = self.width_range
        if not 0 <= lo <= hi:
            raise ValueError("width range must satisfy 0 <= lo <= hi")


def _spd(rng, n, scale, delta):
    M = rng.uniform(-scale, scale, (n, n))
    return M @ M.T + delta * np.eye(n)


def _a22(rng, cfg: GenConfig):
    n = cfg.n
    for _ in range(cfg.max_retries):
        S = rng.uniform(-cfg.entry_scale, cfg.entry_scale, (n, n))
        A = -_spd(rng, n, cfg.entry_scale, cfg.delta) + 0.5 * (S - S.T)
        if np.linalg.cond(A) <= cfg.cond_cap:
            return A
    raise GenerationFailed(f"no A22 with condition number <= {cfg.cond_cap:g} "
                           f"in {cfg.max_retries} draws")


def generate_one(cfg: GenConfig, index: int) -> SpocProblem:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, index])))
    m, n, k, s, dl = cfg.m, cfg.n, cfg.k, cfg.entry_scale, cfg.delta
    u = lambda *shape: rng.uniform(-1.0, 1.0, shape)
    A11, A12, A21 = u(m, m), u(m, n), u(n, m)
    A22 = _a22(rng, cfg)
    b1, b2 = u(m, k), u(n, k)
    Q = _spd(rng, m + n, s, dl)
    R = rng.uniform(dl, 1.0 + dl, k)
    pi11, pi22 = _spd(rng, m, s, dl), _spd(rng, n, s, dl)
    alpha = rng.uniform(*cfg.alpha_range, k)
    beta = alpha + rng.uniform(*cfg.width_range, k)
    z0 = u(m + n)
    return make_problem(T=cfg.T, eps_star=cfg.eps_star, z0=z0, A11=A11, A12=A12, A21=A21,
                        A22=A22, b1=b1, b2=b2, Q=Q, R=R, pi11=pi11, pi22=pi22,
                        alpha=alpha, beta=beta, name=f"{cfg.prefix}_{index}")


def generate(cfg: GenConfig) -> list[SpocProblem]:
    return [generate_one(cfg, i) for i in range(cfg.count)]


def write_problems(problems: Iterable[SpocProblem], out_dir) -> list[Path]:
    """One ``<name>.json`` per problem; each file is written atomically."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in problems:
        path = out / f"{p.name}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(save_problem(p))
        tmp.replace(path)
        paths.append(path)
    return paths
