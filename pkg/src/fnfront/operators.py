"""Pucci extremal operators, (lambda, Lambda)-elliptic families and their
monotone finite-difference evaluation on uniform grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expressions import Expression

FORMS = ("linear_trace", "pucci_minus", "pucci_plus", "bellman_inf")
CONCAVE_FORMS = ("linear_trace", "pucci_minus", "bellman_inf")
SYM_TOL = 1e-12
AUDIT_TOL = 1e-9


class OperatorError(ValueError):
    pass


def as_sym(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise OperatorError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > SYM_TOL * scale:
        raise OperatorError("matrix is not symmetric")
    return M


def sym_eigenvalues(M) -> np.ndarray:
    """Eigenvalues of a symmetric matrix; closed form for n <= 2."""
    M = as_sym(M)
    n = M.shape[0]
    if n == 1:
        return M[0].copy()
    if n == 2:
        a, b, c = M[0, 0], M[0, 1], M[1, 1]
        mid = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        return np.array([mid - rad, mid + rad])
    return np.linalg.eigvalsh(M)


def _pucci_from_eigs(eigs, pos_w, neg_w):
    eigs = np.asarray(eigs, dtype=float)
    return pos_w * np.sum(np.maximum(eigs, 0.0), axis=0) + neg_w * np.sum(
        np.minimum(eigs, 0.0), axis=0
    )


def _check_constants(lam, Lam):
    if not (lam > 0 and Lam >= lam):
        raise OperatorError(f"need 0 < lambda <= Lambda, got {lam}, {Lam}")


def pucci_minus(M, lam: float, Lam: float) -> float:
    _check_constants(lam, Lam)
    return float(_pucci_from_eigs(sym_eigenvalues(M), lam, Lam))


def pucci_plus(M, lam: float, Lam: float) -> float:
    _check_constants(lam, Lam)
    return float(_pucci_from_eigs(sym_eigenvalues(M), Lam, lam))


def _coef(entry):
    if isinstance(entry, (int, float)):
        return float(entry)
    return Expression(entry)


@dataclass(frozen=True)
class OperatorSpec:
    """A (lambda, Lambda)-elliptic operator ``F(x, t, M)``.

    ``matrix`` is used by ``linear_trace``, ``family`` by ``bellman_inf``.
    Matrix entries are numbers or expression strings in ``x, y, t``.
    """

    lam: float
    Lam: float
    form: str = "pucci_minus"
    matrix: tuple | None = None
    family: tuple = field(default_factory=tuple)

    def __post_init__(self):
        _check_constants(self.lam, self.Lam)
        if self.form not in FORMS:
            raise OperatorError(f"unknown form {self.form!r}; expected one of {FORMS}")
        if self.form == "linear_trace":
            if self.matrix is None:
                raise OperatorError("linear_trace needs a matrix")
            object.__setattr__(self, "matrix", self._freeze(self.matrix))
        if self.form == "bellman_inf":
            if len(self.family) == 0:
                raise OperatorError("bellman_inf family is empty")
            object.__setattr__(self, "family", tuple(self._freeze(A) for A in self.family))

    @staticmethod
    def _freeze(A):
        rows = tuple(tuple(_coef(e) for e in row) for row in np.atleast_2d(np.asarray(A, dtype=object)))
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise OperatorError("coefficient matrix must be square")
        for i in range(n):
            for j in range(i):
                a, b = rows[i][j], rows[j][i]
                if isinstance(a, float) and isinstance(b, float):
                    if abs(a - b) > SYM_TOL * max(1.0, abs(a)):
                        raise OperatorError("coefficient matrix is not symmetric")
                elif a != b:
                    raise OperatorError("coefficient matrix is not symmetric")
        return rows

    @classmethod
    def from_config(cls, block: dict, dim: int | None = None) -> "OperatorSpec":
        form = block.get("form", "pucci_minus")
        lam, Lam = float(block["lambda"]), float(block["Lambda"])
        matrix = block.get("matrix")
        if form == "linear_trace" and matrix is None and dim is not None:
            matrix = np.eye(dim).tolist()
        return cls(lam, Lam, form, matrix=matrix, family=tuple(block.get("family", ())))

    def to_dict(self) -> dict:
        def dump(A):
            return [[e if isinstance(e, float) else e.source for e in row] for row in A]

        d = {"form": self.form, "lambda": self.lam, "Lambda": self.Lam}
        if self.matrix is not None:
            d["matrix"] = dump(self.matrix)
        if self.family:
            d["family"] = [dump(A) for A in self.family]
        return d

    @property
    def matrix_dim(self):
        if self.matrix is not None:
            return len(self.matrix)
        if self.family:
            return len(self.family[0])
        return None

    def matrices_at(self, x, t):
        """Coefficient matrices evaluated at ``(x, t)``; entries broadcast over ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        env = {"x": x[0], "y": x[1] if x.shape[0] > 1 else 0.0, "t": t}
        mats = [self.matrix] if self.form == "linear_trace" else list(self.family)
        out = []
        for A in mats:
            out.append(
                [[e if isinstance(e, float) else e(**env) for e in row] for row in A]
            )
        return out


def evaluate_F(spec: OperatorSpec, x, t, M) -> float:
    M = as_sym(M)
    if spec.form == "pucci_minus":
        return pucci_minus(M, spec.lam, spec.Lam)
    if spec.form == "pucci_plus":
        return pucci_plus(M, spec.lam, spec.Lam)
    mats = [np.asarray(A, dtype=float) for A in spec.matrices_at(np.atleast_1d(x), t)]
    if not mats:
        raise OperatorError("operator family is empty")
    for A in mats:
        if A.shape != M.shape:
            raise OperatorError(f"coefficient shape {A.shape} != matrix shape {M.shape}")
    vals = [float(np.sum(A * M)) for A in mats]
    return min(vals)


@dataclass
class EllipticityReport:
    passed: bool
    samples: int
    worst: dict
    failures: list

    def to_dict(self):
        return {"passed": self.passed, "samples": self.samples, "worst": self.worst,
                "failures": self.failures}


def _random_sym(rng, n):
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


def _random_psd(rng, n):
    B = rng.standard_normal((n, rng.integers(1, n + 1)))
    return B @ B.T


def ellipticity_audit(spec: OperatorSpec, samples: int = 1000, dim: int | None = None,
                      seed: int = 0) -> EllipticityReport:
    """Sample-based check of uniform ellipticity, the rescaled Pucci chain,
    ``F(., ., 0) = 0``, family eigenvalue bounds and concavity.

    The upper ellipticity bound is checked with constant ``n * Lambda``:
    with ``||P||`` the largest eigenvalue, ``tr(P) <= n ||P||`` is sharp for
    every member of the class.
    """
    if samples < 1:
        raise OperatorError("samples must be >= 1")
    n = dim or spec.matrix_dim or 1
    rng = np.random.default_rng(seed)
    lam, Lam = spec.lam, spec.Lam
    worst = {k: 0.0 for k in ("lower", "upper", "pucci_lower", "pucci_upper", "zero",
                              "family", "concavity")}
    failures = []

    def note(key, violation, info):
        if violation > worst[key]:
            worst[key] = float(violation)
        if violation > AUDIT_TOL and len(failures) < 20:
            failures.append({"check": key, "violation": float(violation), **info})

    for s in range(samples):
        x = rng.uniform(0, 1, n)
        t = float(rng.uniform(0, 1))
        info = {"sample": s}
        F = lambda M: evaluate_F(spec, x, t, M)  # noqa: E731
        M = _random_sym(rng, n)
        P = _random_psd(rng, n)
        normP = float(sym_eigenvalues(P).max())
        dF = F(M + P) - F(M)
        note("lower", lam * normP - dF, info)
        note("upper", dF - n * Lam * normP, info)
        A, B = _random_sym(rng, n), _random_sym(rng, n)
        d = F(A) - F(B)
        note("pucci_lower", pucci_minus(A - B, lam / n, Lam) - d, info)
        note("pucci_upper", d - pucci_plus(A - B, lam / n, Lam), info)
        note("zero", abs(F(np.zeros((n, n)))), info)
        if spec.form in CONCAVE_FORMS:
            N = _random_sym(rng, n)
            note("concavity", 0.5 * (F(M) + F(N)) - F(0.5 * (M + N)), info)
        if spec.form in ("linear_trace", "bellman_inf"):
            for A_m in spec.matrices_at(x, t):
                e = sym_eigenvalues(np.asarray(A_m, dtype=float))
                note("family", max(lam - e.min(), e.max() - Lam), info)
    passed = all(v <= AUDIT_TOL for v in worst.values())
    return EllipticityReport(passed, samples, worst, failures)


# ---------------------------------------------------------------------------
# discrete evaluation

# stencil directions: axes, then (1,1) and (1,-1) diagonals in 2D
_DIRS = {1: [(1,)], 2: [(1, 0), (0, 1), (1, 1), (1, -1)]}


def directional_second_differences(w: np.ndarray, h: float) -> list[np.ndarray]:
    """Centred second differences of ``w`` along the stencil directions,
    on interior nodes.  Diagonal differences are normalised by the diagonal
    step length, so each is a second directional derivative."""
    dim = w.ndim
    out = []
    c = w[(slice(1, -1),) * dim]
    for d in _DIRS[dim]:
        plus = w[tuple(slice(1 + o, w.shape[a] - 1 + o) for a, o in enumerate(d))]
        minus = w[tuple(slice(1 - o, w.shape[a] - 1 - o) for a, o in enumerate(d))]
        step2 = h * h * sum(o * o for o in d)
        out.append((plus + minus - 2.0 * c) / step2)
    return out


class DiscreteOperator:
    """Monotone (degenerate-elliptic) evaluation of ``F(x, t, D^2_h w)``.

    Linear and Bellman forms use the axis+diagonal decomposition, which is
    monotone for diagonally dominant coefficients.  Pucci forms replace the
    eigenvalues of the Hessian by the extreme directional second differences.
    """

    def __init__(self, spec: OperatorSpec, grid):
        self.spec = spec
        self.grid = grid
        self.dim = grid.dim
        h = grid.h
        # bound on -dF/dw_center
        self.center_bound = 2.0 * self.dim * spec.Lam / (h * h)
        inner = (slice(1, -1),) * self.dim
        self._xs = [c[inner] for c in grid.coords()]
        self._static = None
        if spec.form in ("linear_trace", "bellman_inf") and not self._has_fields():
            self._static = self._weights(0.0)

    def _has_fields(self):
        mats = [self.spec.matrix] if self.spec.form == "linear_trace" else self.spec.family
        return any(not isinstance(e, float) for A in mats for row in A for e in row)

    def _weights(self, t):
        """Per-matrix direction weights for the linear forms at time t."""
        x = np.stack([np.asarray(v, dtype=float) for v in self._xs]) if self.dim == 2 else self._xs[0][None]
        out = []
        for A in self.spec.matrices_at(x, t):
            if len(A) != self.dim:
                raise OperatorError(f"coefficient matrix is {len(A)}x{len(A)} on a {self.dim}D grid")
            if self.dim == 1:
                out.append([np.asarray(A[0][0], dtype=float)])
                continue
            a11, a12, a22 = (np.asarray(v, dtype=float) for v in (A[0][0], A[0][1], A[1][1]))
            b = np.abs(a12)
            if np.any(a11 < b - 1e-14) or np.any(a22 < b - 1e-14):
                raise OperatorError("coefficient matrix is not diagonally dominant; "
                                    "the 9-point scheme would not be monotone")
            out.append([a11 - b, a22 - b, 2 * np.maximum(a12, 0.0), 2 * np.maximum(-a12, 0.0)])
        return out

    def level_data(self, t):
        if self.spec.form in ("linear_trace", "bellman_inf"):
            return self._static if self._static is not None else self._weights(t)
        return None

    def apply(self, w: np.ndarray, data=None) -> np.ndarray:
        """``F(x, t, D^2_h w)`` on interior nodes of a spatial slice."""
        D = directional_second_differences(w, self.grid.h)
        form = self.spec.form
        if form in ("pucci_minus", "pucci_plus"):
            pos, neg = (self.spec.lam, self.spec.Lam) if form == "pucci_minus" else (
                self.spec.Lam, self.spec.lam)
            if self.dim == 1:
                eigs = [D[0]]
            else:
                stack = np.stack(D)
                eigs = [stack.max(axis=0), stack.min(axis=0)]
            val = 0.0
            for e in eigs:
                val = val + pos * np.maximum(e, 0.0) + neg * np.minimum(e, 0.0)
            return val
        weights = data if data is not None else self.level_data(0.0)
        best = None
        for wts in weights:
            v = sum(c * d for c, d in zip(wts, D))
            best = v if best is None else np.minimum(best, v)
        return best


def discrete_operator_apply(spec: OperatorSpec, values: np.ndarray, grid, node) -> float:
    """``F(x, t, D^2_h u) - (u(x,t) - u(x,t-dt))/dt`` at one parabolic-interior node."""
    node = grid.check_node(node)
    k, sp = node[0], node[1:]
    if k < 1 or any(i < 1 or i > grid.nx - 2 for i in sp):
        raise OperatorError(f"stencil of node {node} leaves the grid")
    values = np.asarray(values, dtype=float)
    window = tuple(slice(i - 1, i + 2) for i in sp)
    op = DiscreteOperator(spec, _LocalGrid(grid, sp))
    data = op.level_data(grid.t[k])
    Fv = op.apply(values[k][window], data)
    Fv = float(np.asarray(Fv).reshape(-1)[0])
    return Fv - (values[node] - values[(k - 1,) + sp]) / grid.dt


class _LocalGrid:
    """3^dim window of a grid, used to evaluate the stencil at a single node."""

    def __init__(self, grid, sp):
        self.dim = grid.dim
        self.h = grid.h
        self._coords = [c[tuple(slice(i - 1, i + 2) for i in sp)] for c in grid.coords()]

    def coords(self):
        return self._coords
