"""Problem data for singularly perturbed LQ control problems.

The full problem has slow state ``z1`` (dimension m), fast state ``z2``
(dimension n) and control ``u`` (dimension k) on ``[0, T]``::

    dz1/dt   = A11 z1 + A12 z2 + b1 u
    eps dz2/dt = A21 z1 + A22 z2 + eps b2 u
    z(0) = z0,   alpha(t) <= u(t) <= beta(t)

with cost ``1/2 int z'Qz + u'Ru dt + 1/2 z(T)' pi z(T)`` and
``pi = blockdiag(pi11, eps * pi22)``.  Every coefficient is a truncated
double power series in ``t`` and ``eps`` (:class:`CoeffMatrix`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CoeffMatrix",
    "SpocProblem",
    "Trajectory",
    "CheckResult",
    "ValidationReport",
    "ParseError",
    "DimensionMismatch",
    "SingularData",
    "MeshMismatch",
    "eval_coeff",
    "validate",
    "load_problem",
    "save_problem",
    "MATRIX_KEYS",
]

MATRIX_KEYS = (
    "A11", "A12", "A21", "A22", "b1", "b2",
    "Q11", "Q12", "Q21", "Q22", "R", "pi11", "pi22",
)


class ParseError(ValueError):
    """Problem file does not conform to the schema."""


class DimensionMismatch(ParseError):
    """Block shapes disagree with the declared dimensions."""


class SingularData(ValueError):
    """Coefficient blocks are structurally inconsistent."""


class MeshMismatch(ValueError):
    """Channels that must share a mesh do not."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CoeffMatrix:
    """Matrix-valued polynomial ``sum_{p,q} c[p, q] t**p eps**q``.

    ``data`` has shape ``(Dt + 1, De + 1, rows, cols)``.
    """

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 4:
            raise SingularData(f"coefficient array must be 4-d, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise SingularData("coefficient array has non-finite entries")
        object.__setattr__(self, "data", _frozen(d))

    @classmethod
    def constant(cls, matrix) -> "CoeffMatrix":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(m[None, None])

    @property
    def rows(self) -> int:
        return self.data.shape[2]

    @property
    def cols(self) -> int:
        return self.data.shape[3]

    @property
    def Dt(self) -> int:
        return self.data.shape[0] - 1

    @property
    def De(self) -> int:
        return self.data.shape[1] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def __call__(self, t: float, eps: float) -> np.ndarray:
        return eval_coeff(self, t, eps)

    def leading(self) -> "CoeffMatrix":
        """The eps**0 term, a polynomial in t alone."""
        return CoeffMatrix(self.data[:, :1])

    def transpose(self) -> "CoeffMatrix":
        return CoeffMatrix(np.swapaxes(self.data, 2, 3))

    def __eq__(self, other):
        if not isinstance(other, CoeffMatrix):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "Dt": self.Dt,
            "De": self.De,
            "data": self.data.tolist(),
        }


def eval_coeff(cm: CoeffMatrix, t: float, eps: float) -> np.ndarray:
    """Evaluate the truncated series entrywise at ``(t, eps)``."""
    tp = float(t) ** np.arange(cm.Dt + 1)
    eq = float(eps) ** np.arange(cm.De + 1)
    # 0.0 ** 0 == 1.0, so eps = 0 returns the leading term
    return np.einsum("p,q,pqij->ij", tp, eq, cm.data)


@dataclass(frozen=True, eq=False)
class SpocProblem:
    m: int
    n: int
    k: int
    T: float
    eps_star: float
    z0: np.ndarray
    A11: CoeffMatrix
    A12: CoeffMatrix
    A21: CoeffMatrix
    A22: CoeffMatrix
    b1: CoeffMatrix
    b2: CoeffMatrix
    Q11: CoeffMatrix
    Q12: CoeffMatrix
    Q21: CoeffMatrix
    Q22: CoeffMatrix
    Rdiag: CoeffMatrix
    pi11: CoeffMatrix
    pi22: CoeffMatrix
    alpha: CoeffMatrix
    beta: CoeffMatrix
    name: str = field(default="problem", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "z0", _frozen(np.ravel(self.z0)))
        m, n, k = self.m, self.n, self.k
        if min(m, n, k) < 1:
            raise SingularData("dimensions m, n, k must be positive")
        expected = {
            "A11": (m, m), "A12": (m, n), "A21": (n, m), "A22": (n, n),
            "b1": (m, k), "b2": (n, k),
            "Q11": (m, m), "Q12": (m, n), "Q21": (n, m), "Q22": (n, n),
            "Rdiag": (k, 1), "pi11": (m, m), "pi22": (n, n),
            "alpha": (k, 1), "beta": (k, 1),
        }
        for key, shape in expected.items():
            got = getattr(self, key).shape
            if got != shape:
                raise SingularData(f"{key} has shape {got}, expected {shape}")
        if self.z0.shape != (m + n,):
            raise SingularData(f"z0 has length {self.z0.size}, expected {m + n}")
        for key in ("pi11", "pi22"):
            if getattr(self, key).Dt != 0:
                raise SingularData(f"{key} must not depend on t")
        for key in ("alpha", "beta"):
            if getattr(self, key).De != 0:
                raise SingularData(f"{key} must not depend on eps")
        if not self.T > 0:
            raise SingularData("horizon T must be positive")
        if not self.eps_star > 0:
            raise SingularData("eps_star must be positive")

    # -- assembled blocks -------------------------------------------------
    @property
    def d(self) -> int:
        return self.m + self.n

    @property
    def time_varying(self) -> bool:
        return any(getattr(self, key).Dt > 0 for key in self._coeff_fields())

    @staticmethod
    def _coeff_fields() -> tuple[str, ...]:
        return ("A11", "A12", "A21", "A22", "b1", "b2", "Q11", "Q12", "Q21",
                "Q22", "Rdiag", "pi11", "pi22", "alpha", "beta")

    def A(self, t, eps):
        return np.block([[self.A11(t, eps), self.A12(t, eps)],
                         [self.A21(t, eps), self.A22(t, eps)]])

    def b(self, t, eps):
        return np.vstack([self.b1(t, eps), self.b2(t, eps)])

    def Q(self, t, eps):
        return np.block([[self.Q11(t, eps), self.Q12(t, eps)],
                         [self.Q21(t, eps), self.Q22(t, eps)]])

    def R(self, t, eps):
        return self.Rdiag(t, eps)[:, 0]

    def pi(self, eps):
        """Terminal weight ``blockdiag(pi11, eps * pi22)``."""
        out = np.zeros((self.d, self.d))
        out[: self.m, : self.m] = self.pi11(0.0, eps)
        out[self.m:, self.m:] = eps * self.pi22(0.0, eps)
        return out

    def pi_scaled(self, eps):
        """``I^{1/eps} pi = blockdiag(pi11, pi22)``, free of 1/eps."""
        out = np.zeros((self.d, self.d))
        out[: self.m, : self.m] = self.pi11(0.0, eps)
        out[self.m:, self.m:] = self.pi22(0.0, eps)
        return out

    def Ieps(self, eps) -> np.ndarray:
        """Diagonal of ``I^eps``."""
        return np.concatenate([np.ones(self.m), np.full(self.n, float(eps))])

    def box(self, t):
        return self.alpha(t, 0.0)[:, 0], self.beta(t, 0.0)[:, 0]

    def replace(self, **changes) -> "SpocProblem":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return SpocProblem(**kw)

    def __eq__(self, other):
        if not isinstance(other, SpocProblem):
            return NotImplemented
        scalars = ("m", "n", "k", "T", "eps_star")
        return (all(getattr(self, s) == getattr(other, s) for s in scalars)
                and np.array_equal(self.z0, other.z0)
                and all(getattr(self, f) == getattr(other, f) for f in self._coeff_fields()))

    __hash__ = None


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nodal samples of named channels on a strictly increasing mesh.

    Between nodes every channel is interpolated piecewise-linearly.
    """

    mesh: np.ndarray
    channels: Mapping[str, np.ndarray]
    interpolation: str = "linear"

    def __post_init__(self):
        mesh = _frozen(np.ravel(self.mesh))
        if mesh.size < 2 or np.any(np.diff(mesh) <= 0):
            raise MeshMismatch("mesh must have at least two strictly increasing nodes")
        chans = {}
        for name, values in self.channels.items():
            v = np.asarray(values, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            if v.shape[0] != mesh.size:
                raise MeshMismatch(
                    f"channel {name!r} has {v.shape[0]} samples for {mesh.size} nodes")
            chans[name] = _frozen(v)
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "channels", chans)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    @property
    def T(self) -> float:
        return float(self.mesh[-1])

    def evaluate(self, name: str, t) -> np.ndarray:
        """Piecewise-linear value of channel ``name`` at time(s) ``t``."""
        v = self.channels[name]
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.mesh, v[:, j]) for j in range(v.shape[1])], axis=-1)
        return out

    def channel(self, name: str) -> "Trajectory":
        return Trajectory(self.mesh, {name: self.channels[name]}, self.interpolation)

    def with_channels(self, **channels) -> "Trajectory":
        merged = dict(self.channels)
        merged.update(channels)
        return Trajectory(self.mesh, merged, self.interpolation)

    def same_mesh(self, other: "Trajectory") -> bool:
        return self.mesh.shape == other.mesh.shape and np.array_equal(self.mesh, other.mesh)

    def to_csv(self) -> str:
        header = ["t"]
        cols = [self.mesh[:, None]]
        for name, v in self.channels.items():
            header += [f"{name}_{j}" for j in range(v.shape[1])]
            cols.append(v)
        data = np.hstack(cols)
        lines = [",".join(header)]
        lines += [",".join(repr(float(x)) for x in row) for row in data]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    sample: tuple[float, float] | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]
    t_grid: tuple[float, ...]
    eps_grid: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def format(self) -> str:
        lines = [f"grid: {len(self.t_grid)} t-points x {len(self.eps_grid)} eps-points"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            where = "" if c.sample is None else f" at (t={c.sample[0]:.6g}, eps={c.sample[1]:.6g})"
            extra = f" [{c.detail}]" if c.detail else ""
            lines.append(f"{status:4s}  {c.name:<28s} margin={c.margin:+.6e}{where}{extra}")
        lines.append("overall: " + ("pass" if self.ok else "FAIL"))
        return "\n".join(lines)


def _worst(samples: Iterable[tuple[float, float, float]], *, larger_is_worse: bool):
    samples = list(samples)
    key = (lambda s: s[0]) if larger_is_worse else (lambda s: -s[0])
    return max(samples, key=key)


def validate(p: SpocProblem, n_t: int = 17, n_eps: int = 5) -> ValidationReport:
    """Check the standing assumptions on a sample grid in ``(t, eps)``.

    Assumption (a) is checked as Hurwitz stability of ``A22`` (spectral
    abscissa below zero); the largest eigenvalue of its symmetric part is
    reported alongside as a diagnostic only.
    """
    if n_t < 2 or n_eps < 2:
        raise ValueError("grid needs at least two points per axis")
    ts = np.linspace(0.0, p.T, n_t)
    es = np.linspace(0.0, p.eps_star, n_eps)

    def sweep(fn):
        return [(fn(t, e), t, e) for t in ts for e in es]

    checks = []

    def add(name, samples, bad_if_positive: bool, detail=""):
        worst = _worst(samples, larger_is_worse=bad_if_positive)
        margin, t, e = worst
        passed = margin < 0 if bad_if_positive else margin > 0
        checks.append(CheckResult(name, bool(passed), float(margin),
                                  None if passed else (float(t), float(e)), detail))

    add("A22 spectral abscissa", sweep(lambda t, e: np.max(np.linalg.eigvals(p.A22(t, e)).real)),
        True, "assumption (a)")
    sym = sweep(lambda t, e: np.max(np.linalg.eigvalsh(0.5 * (p.A22(t, e) + p.A22(t, e).T))))
    worst = _worst(sym, larger_is_worse=True)
    checks.append(CheckResult("A22 symmetric part (info)", True, float(worst[0]), None,
                              "negative => symmetric part negative definite"))

    def qmin(t, e):
        Q = p.Q(t, e)
        return np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T)))

    def qasym(t, e):
        Q = p.Q(t, e)
        return np.max(np.abs(Q - Q.T))

    add("Q symmetric", sweep(lambda t, e: qasym(t, e) - 1e-12), True)
    add("Q positive definite", sweep(qmin), False)
    add("R diagonal positive", sweep(lambda t, e: np.min(p.R(t, e))), False)
    for key in ("pi11", "pi22"):
        cm = getattr(p, key)
        add(f"{key} symmetric", [(np.max(np.abs(cm(0, e) - cm(0, e).T)) - 1e-12, 0.0, e)
                                 for e in es], True)
        add(f"{key} positive definite",
            [(np.min(np.linalg.eigvalsh(0.5 * (cm(0, e) + cm(0, e).T))), 0.0, e) for e in es],
            False)
    add("alpha <= beta", [(np.min(p.box(t)[1] - p.box(t)[0]), t, 0.0) for t in ts], False)
    # a degenerate box (alpha == beta) is allowed
    last = checks[-1]
    if not last.passed and last.margin == 0.0:
        checks[-1] = CheckResult(last.name, True, 0.0)
    return ValidationReport(tuple(checks), tuple(map(float, ts)), tuple(map(float, es)))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FIELD_FOR_KEY = {key: ("Rdiag" if key == "R" else key) for key in MATRIX_KEYS}


def _parse_coeff(obj, where: str) -> CoeffMatrix:
    if not isinstance(obj, Mapping):
        raise ParseError(f"{where}: expected an object with rows/cols/Dt/De/data")
    try:
        rows, cols, Dt, De = (int(obj[k]) for k in ("rows", "cols", "Dt", "De"))
        data = np.array(obj["data"], dtype=float)
    except KeyError as exc:
        raise ParseError(f"{where}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: malformed entry ({exc})") from None
    if data.shape != (Dt + 1, De + 1, rows, cols):
        raise DimensionMismatch(
            f"{where}: data has shape {data.shape}, declared {(Dt + 1, De + 1, rows, cols)}")
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{where}: non-finite coefficient")
    return CoeffMatrix(data)


def problem_from_dict(doc: Mapping, name: str = "problem") -> SpocProblem:
    try:
        m, n, k = (int(doc[key]) for key in ("m", "n", "k"))
        T, eps_star = float(doc["T"]), float(doc["eps_star"])
        z0 = np.array(doc["z0"], dtype=float)
        mats = doc["matrices"]
    except KeyError as exc:
        raise ParseError(f"missing top-level field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed top-level field ({exc})") from None
    if z0.shape != (m + n,):
        raise DimensionMismatch(f"z0: length {z0.size}, expected m + n = {m + n}")
    kw = {}
    for key in MATRIX_KEYS:
        if key not in mats:
            raise ParseError(f"matrices: missing block {key!r}")
        kw[_FIELD_FOR_KEY[key]] = _parse_coeff(mats[key], f"matrices.{key}")
    for key in ("alpha", "beta"):
        if key not in doc:
            raise ParseError(f"missing top-level field {key!r}")
        kw[key] = _parse_coeff(doc[key], key)
    try:
        p = SpocProblem(m=m, n=n, k=k, T=T, eps_star=eps_star, z0=z0, name=name, **kw)
    except SingularData as exc:
        raise DimensionMismatch(str(exc)) from None
    ts = np.linspace(0.0, T, 17)
    for t in ts:
        lo, hi = p.box(t)
        bad = np.flatnonzero(lo > hi)
        if bad.size:
            j = int(bad[0])
            raise ParseError(
                f"alpha[{j}] > beta[{j}] at t={t:.6g}: the control box is empty")
    return p


def load_problem(text: str, name: str = "problem") -> SpocProblem:
    """Parse problem-file JSON text."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, Mapping):
        raise ParseError("top level must be a JSON object")
    return problem_from_dict(doc, name=doc.get("name", name) if isinstance(doc.get("name"), str) else name)


def problem_to_dict(p: SpocProblem) -> dict:
    mats = {key: getattr(p, _FIELD_FOR_KEY[key]).to_json() for key in MATRIX_KEYS}
    return {
        "m": p.m,
        "n": p.n,
        "k": p.k,
        "T": float(p.T),
        "eps_star": float(p.eps_star),
        "z0": [float(x) for x in p.z0],
        "matrices": mats,
        "alpha": p.alpha.to_json(),
        "beta": p.beta.to_json(),
    }


def save_problem(p: SpocProblem) -> str:
    """Emit schema-conformant JSON with a fixed field order.

    Floats are printed with Python's shortest round-trip repr, so
    ``load_problem(save_problem(p)) == p`` exactly.
    """
    return json.dumps(problem_to_dict(p), indent=1) + "\n"


def make_problem(*, T: float, eps_star: float, z0: Sequence[float], A11, A12, A21, A22,
                 b1, b2, Q, R, pi11, pi22, alpha, beta, name: str = "problem") -> SpocProblem:
    """Build a constant-coefficient problem from plain arrays."""
    A11, A12, A21, A22 = (np.atleast_2d(np.asarray(x, float)) for x in (A11, A12, A21, A22))
    m, n = A11.shape[0], A22.shape[0]
    b1, b2 = np.asarray(b1, float).reshape(m, -1), np.asarray(b2, float).reshape(n, -1)
    k = b1.shape[1]
    Q = np.atleast_2d(np.asarray(Q, float))
    c = CoeffMatrix.constant
    col = lambda v: c(np.asarray(v, float).reshape(k, 1))
    return SpocProblem(
        m=m, n=n, k=k, T=float(T), eps_star=float(eps_star), z0=np.asarray(z0, float),
        A11=c(A11), A12=c(A12), A21=c(A21), A22=c(A22), b1=c(b1), b2=c(b2),
        Q11=c(Q[:m, :m]), Q12=c(Q[:m, m:]), Q21=c(Q[m:, :m]), Q22=c(Q[m:, m:]),
        Rdiag=col(np.broadcast_to(R, (k,))), pi11=c(pi11), pi22=c(pi22),
        alpha=col(np.broadcast_to(alpha, (k,))), beta=col(np.broadcast_to(beta, (k,))),
        name=name,
    )
