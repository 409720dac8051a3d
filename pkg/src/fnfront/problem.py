"""Problem data: reaction profile, forcing, Dirichlet data and assumption checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, optimize

from .expressions import Expression
from .geometry import SpaceTimeGrid
from .operators import OperatorSpec, ellipticity_audit


class ProblemError(ValueError):
    pass


def default_bump(s):
    """``exp(1 - 1/(4 s (1 - s)))`` on (0, 1), zero elsewhere; peak 1 at s = 1/2."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (4.0 * si * (1.0 - si)))
    return out


def default_bump_derivative(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    si = s[inside]
    q = si * (1.0 - si)
    out[inside] = np.exp(1.0 - 1.0 / (4.0 * q)) * (1.0 - 2.0 * si) / (4.0 * q * q)
    return out


@dataclass(frozen=True)
class ReactionProfile:
    """Base bump ``beta`` supported in [0, 1] with ``0 <= beta <= 1``.

    ``source`` is ``"default"`` or an expression in ``s`` (evaluated on
    (0, 1) and extended by zero).  ``amplitude`` scales the bump; ``zero``
    gives ``beta = 0``.
    """

    source: str = "default"
    amplitude: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.amplitude <= 1.0:
            raise ProblemError("amplitude must lie in [0, 1] so that sup beta <= 1")
        if self.source not in ("default", "zero"):
            expr = Expression(self.source, variables=("s",))
            object.__setattr__(self, "_expr", expr)
        self._check_shape()

    @classmethod
    def zero(cls):
        return cls("zero", 0.0)

    @property
    def is_zero(self) -> bool:
        return self.source == "zero" or self.amplitude == 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_zero:
            return np.zeros_like(s)
        if self.source == "default":
            return self.amplitude * default_bump(s)
        out = np.zeros_like(s)
        inside = (s > 0) & (s < 1)
        out[inside] = self._expr(s=s[inside])
        return self.amplitude * out

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        if self.is_zero:
            return np.zeros_like(s)
        if self.source == "default":
            return self.amplitude * default_bump_derivative(s)
        step = 1e-6
        return (self(s + step) - self(s - step)) / (2 * step)

    def _check_shape(self):
        s = np.linspace(-0.25, 1.25, 30001)
        b = self(s)
        if np.any(~np.isfinite(b)):
            raise ProblemError("bump is not finite")
        if np.any(b[(s <= 0) | (s >= 1)] != 0):
            raise ProblemError("bump must vanish outside (0, 1)")
        if b.min() < 0 or b.max() > 1 + 1e-12:
            raise ProblemError("bump must satisfy 0 <= beta <= 1")
        # a jump of the one-sided slopes that does not shrink with the step is a kink
        d = 1e-5
        pts = np.concatenate([s, [0.0, 1.0]])
        right = (self(pts + 2 * d) - self(pts + d)) / d
        left = (self(pts - d) - self(pts - 2 * d)) / d
        if np.max(np.abs(right - left)) > 1e-2:
            raise ProblemError("bump is not continuously differentiable")

    @cached_property
    def mass(self) -> float:
        return mollifier_mass(self)

    @cached_property
    def max_abs_derivative(self) -> float:
        """``sup |beta'|`` by dense sampling refined with a bounded 1D maximisation."""
        if self.is_zero:
            return 0.0
        s = np.linspace(0.0, 1.0, 20001)
        g = np.abs(self.derivative(s))
        i = int(np.argmax(g))
        lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
        res = optimize.minimize_scalar(
            lambda v: -abs(float(self.derivative(np.array([v]))[0])),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
        )
        return float(max(g[i], -res.fun))

    def to_dict(self):
        return {"profile": self.source, "amplitude": self.amplitude}


def beta_eps(s, eps: float, profile: ReactionProfile):
    """``(1/eps) beta(s/eps)``."""
    if not eps > 0:
        raise ProblemError(f"eps must be positive, got {eps}")
    return profile(np.asarray(s, dtype=float) / eps) / eps


def mollifier_mass(profile: ReactionProfile) -> float:
    """``int_0^1 beta`` by adaptive quadrature (relative error <= 1e-8)."""
    if profile.is_zero:
        return 0.0
    val, _ = integrate.quad(lambda s: float(profile(np.array([s]))[0]), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-11, limit=200)
    return float(val)


@dataclass(frozen=True)
class ForcingSpec:
    """``f(x, t, eps)`` with ``c0 <= f <= c1`` and ``|grad f| <= grad_bound``."""

    expr: Expression
    c0: float
    c1: float
    grad_bound: float = 0.0

    @classmethod
    def constant(cls, value: float):
        return cls(Expression(repr(float(value)), ("x", "y", "t", "eps")), value, value, 0.0)

    @classmethod
    def from_config(cls, block):
        return cls(
            Expression(str(block["expr"]), ("x", "y", "t", "eps")),
            float(block["c0"]),
            float(block["c1"]),
            float(block.get("grad_bound", 0.0)),
        )

    def __call__(self, x, t, eps=0.0, y=0.0):
        return self.expr(x=x, y=y, t=t, eps=eps)

    def to_dict(self):
        return {"expr": self.expr.source, "c0": self.c0, "c1": self.c1,
                "grad_bound": self.grad_bound}


@dataclass(frozen=True)
class DirichletSpec:
    expr: Expression

    @classmethod
    def from_config(cls, block):
        return cls(Expression(str(block["expr"]), ("x", "y", "t")))

    @classmethod
    def zero(cls):
        return cls(Expression("0", ("x", "y", "t")))

    def __call__(self, x, t, y=0.0):
        return self.expr(x=x, y=y, t=t)

    def to_dict(self):
        return {"expr": self.expr.source}


@dataclass(frozen=True)
class ProblemSpec:
    grid: SpaceTimeGrid
    operator: OperatorSpec
    reaction: ReactionProfile
    forcing: ForcingSpec
    dirichlet: DirichletSpec
    eps: float | None = None

    def forcing_at(self, k: int, eps: float) -> np.ndarray:
        """Forcing on the spatial grid at level ``k``."""
        X = self.grid.coords()
        y = X[1] if self.grid.dim == 2 else 0.0
        return np.broadcast_to(
            self.forcing(X[0], self.grid.t[k], eps, y=y), self.grid.space_shape
        ).astype(float)

    def dirichlet_at(self, k: int) -> np.ndarray:
        X = self.grid.coords()
        y = X[1] if self.grid.dim == 2 else 0.0
        return np.broadcast_to(
            self.dirichlet(X[0], self.grid.t[k], y=y), self.grid.space_shape
        ).astype(float)

    def to_dict(self):
        return {
            "grid": self.grid.to_dict(),
            "operator": self.operator.to_dict(),
            "reaction": {**self.reaction.to_dict(), "eps": self.eps},
            "forcing": self.forcing.to_dict(),
            "dirichlet": self.dirichlet.to_dict(),
        }


@dataclass
class AssumptionReport:
    results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r["passed"] for r in self.results.values())

    def to_dict(self):
        return {"passed": self.passed, **self.results}


def _sample_points(grid: SpaceTimeGrid, max_levels: int = 4097):
    """Grid nodes plus midpoints in space and time."""
    xs = np.linspace(0.0, grid.extent, 2 * grid.nx - 1)
    nts = min(2 * grid.nt - 1, max_levels)
    ts = np.linspace(0.0, grid.T, nts)
    return xs, ts


def validate_assumptions(problem: ProblemSpec, eps_values=None, seed: int = 0,
                         audit_samples: int = 300) -> AssumptionReport:
    """Sample-based check of the four data assumptions.  Pure function."""
    grid = problem.grid
    rep = AssumptionReport()
    tol = 1e-12

    ell = ellipticity_audit(problem.operator, audit_samples, dim=grid.dim, seed=seed)
    rep.results["ellipticity"] = {"passed": ell.passed, "worst": ell.worst}

    # reaction bump
    eps_values = list(eps_values or ([problem.eps] if problem.eps else [0.1]))
    worst2, where2 = 0.0, None
    for e in eps_values:
        s = np.linspace(-0.5 * e, 2.0 * e, 5001)
        b = beta_eps(s, e, problem.reaction)
        cap = np.where((s > 0) & (s < e), 1.0 / e, 0.0)
        viol = np.maximum(b - cap, -b) * e
        i = int(np.argmax(viol))
        if viol[i] > worst2:
            worst2, where2 = float(viol[i]), {"eps": e, "s": float(s[i])}
    rep.results["reaction"] = {"passed": worst2 <= tol, "worst": worst2, "where": where2,
                         "mass": problem.reaction.mass}

    # forcing bounds, monotonicity and gradient
    xs, ts = _sample_points(grid)
    f = problem.forcing
    viol3 = {}
    if grid.dim == 1:
        X, Tt = np.meshgrid(xs, ts, indexing="ij")
        Y = 0.0
    else:
        step = max(1, len(xs) // 65)
        xs2 = xs[::step]
        tsub = ts[:: max(1, len(ts) // 65)]
        X, Y, Tt = np.meshgrid(xs2, xs2, tsub, indexing="ij")
    for e in eps_values:
        F = np.broadcast_to(f(X, Tt, e, y=Y), np.shape(X))
        lower = float(np.max(f.c0 - F)) if f.c0 > 0 else np.inf
        upper = float(np.max(F - f.c1))
        mono = float(np.max(np.diff(F, axis=-1))) if F.shape[-1] > 1 else 0.0
        spacing = (xs[1] - xs[0]) if grid.dim == 1 else (xs2[1] - xs2[0])
        grads = [np.diff(F, axis=a) / spacing for a in range(grid.dim)]
        gnorm = max(float(np.max(np.abs(g))) for g in grads)
        viol3[e] = {"c0": lower, "c1": upper, "monotone_t": mono,
                    "grad": gnorm - f.grad_bound}
    worst3 = max(max(v.values()) for v in viol3.values())
    rep.results["forcing"] = {"passed": f.c0 > 0 and worst3 <= 1e-9, "worst": worst3,
                         "by_eps": {repr(k): v for k, v in viol3.items()}}

    # boundary data on the parabolic boundary
    phi = problem.dirichlet
    if grid.dim == 1:
        lat_x = np.array([0.0, grid.extent])
        L = np.stack([phi(xv, ts) * np.ones_like(ts) for xv in lat_x])
        init = phi(xs, 0.0) * np.ones_like(xs)
    else:
        edge = np.linspace(0.0, grid.extent, 2 * grid.nx - 1)
        zero, one = np.zeros_like(edge), np.full_like(edge, grid.extent)
        sides = [(edge, zero), (edge, one), (zero, edge), (one, edge)]
        tsub = ts[:: max(1, len(ts) // 257)]
        L = np.concatenate(
            [np.broadcast_to(phi(sx[:, None], tsub[None, :], y=sy[:, None]),
                             (len(edge), len(tsub))) for sx, sy in sides]
        )
        Xi, Yi = np.meshgrid(edge, edge, indexing="ij")
        init = np.broadcast_to(phi(Xi, 0.0, y=Yi), Xi.shape)
    neg = float(max(np.max(-L), np.max(-init)))
    initial = float(np.max(np.abs(init)))
    mono = float(np.max(-np.diff(L, axis=-1))) if L.shape[-1] > 1 else 0.0
    worst4 = max(neg, initial, mono)
    rep.results["boundary_data"] = {"passed": worst4 <= 1e-12, "worst": worst4,
                         "negative": neg, "initial": initial, "monotone_t": mono}
    return rep
