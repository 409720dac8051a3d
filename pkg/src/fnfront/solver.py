"""Backward-Euler time marching with the mu-shift monotone iteration.

Each time level solves

    F(x, t, D^2_h u) - (u - u_prev)/dt = beta_eps(u) + f

at interior nodes.  The nonlinearity ``g = beta_eps`` is lagged through
``psi_k = mu u_k - g(u_k)`` so that each sweep of the outer iteration solves a
problem that is strictly decreasing in the unknown; that inner problem is
solved by damped Jacobi sweeps.

With ``one_phase`` (the default) the solution is constrained to ``u >= 0``:
each level solves ``max(-u, residual) = 0``, i.e. the equation holds on the
positivity set and ``u = 0`` elsewhere.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import SpaceTimeGrid
from .operators import DiscreteOperator
from .problem import ProblemSpec, ReactionProfile, beta_eps, validate_assumptions

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, msg, trace=None, eps=None, level=None):
        super().__init__(msg)
        self.trace = list(trace or [])
        self.eps = eps
        self.level = level


class AssumptionError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    outer_tol: float = 1e-8
    inner_tol: float = 1e-10
    max_inner: int = 10_000
    max_outer: int = 500
    one_phase: bool = True
    resolution_guard: bool = True
    l_guess: float | None = None

    @classmethod
    def from_config(cls, block: dict | None):
        block = dict(block or {})
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in block.items() if k in known})


def choose_mu(profile: ReactionProfile, eps: float, dt: float | None = None,
              safety: float = 1.05) -> float:
    """``2 sup|beta_eps'| * safety``, floored at ``1/dt``."""
    mu = 2.0 * profile.max_abs_derivative / eps**2 * safety
    floor = 1.0 / dt if dt else 0.0
    return max(mu, floor)


@dataclass
class ShiftState:
    mu: float
    eps: float
    profile: ReactionProfile
    k: int = 0

    def __post_init__(self):
        lip = self.profile.max_abs_derivative / self.eps**2
        if not self.mu > 2.0 * lip:
            raise SolverError(f"mu={self.mu} must exceed 2 sup|g'|={2 * lip}")

    @property
    def g_is_zero(self) -> bool:
        return self.profile.is_zero

    def g(self, u):
        return beta_eps(u, self.eps, self.profile)

    def h(self, u):
        return self.mu * u - self.g(u)


@dataclass
class SolutionField:
    grid: SpaceTimeGrid
    values: np.ndarray
    eps: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def sup(self) -> float:
        return float(np.max(self.values))

    @property
    def inf(self) -> float:
        return float(np.min(self.values))

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]

    def to_csv(self, fh):
        """Write ``x[,y],t,u`` rows with round-trip precision."""
        g = self.grid
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "t", "u"] if g.dim == 1 else ["x", "y", "t", "u"])
        xs, ts = g.x, g.t
        for k in range(g.nt):
            row_t = repr(float(ts[k]))
            if g.dim == 1:
                for i in range(g.nx):
                    w.writerow([repr(float(xs[i])), row_t, repr(float(self.values[k, i]))])
            else:
                for i in range(g.nx):
                    for j in range(g.nx):
                        w.writerow([repr(float(xs[i])), repr(float(xs[j])), row_t,
                                    repr(float(self.values[k, i, j]))])

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, fh, grid: SpaceTimeGrid | None = None, eps=None):
        rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float)
        dim = len(header) - 2
        xs = np.unique(data[:, 0])
        ts = np.unique(data[:, dim])
        if grid is None:
            grid = SpaceTimeGrid(dim, len(xs), len(ts), float(ts[-1]), extent=float(xs[-1]),
                                 parabolic_scaling_factor=np.inf)
        if data.shape[0] != grid.node_count():
            raise ValueError("CSV does not match grid size")
        # rows are written level-major then x (then y)
        values = data[:, -1].reshape(grid.shape)
        return cls(grid, values, eps)


def _interior(dim):
    return (slice(1, -1),) * dim


def shifted_step_solve(problem: ProblemSpec, eps: float, state: ShiftState,
                       u_prev_time: np.ndarray, u_k_slice: np.ndarray, k: int,
                       options: SolverOptions = SolverOptions(), op=None, f=None):
    """Solve one shifted problem at level ``k`` with ``psi = h(u_k)`` lagged.

    ``u_k_slice`` must carry the level's boundary values; it is also the
    starting guess.  Returns ``(w, info)`` where ``info['residual']`` is the
    max-norm of the last damped update.
    """
    grid = problem.grid
    dt = grid.dt
    op = op or DiscreteOperator(problem.operator, grid)
    data = op.level_data(grid.t[k])
    inner = _interior(grid.dim)
    if f is None:
        f = problem.forcing_at(k, eps)[inner]
    w = np.array(u_k_slice, dtype=float)
    uk = w[inner].copy()
    if state.g_is_zero:
        # psi = mu*w cancels the shift exactly
        mu, psi = 0.0, 0.0
    else:
        mu, psi = state.mu, state.h(uk)
    rhs = psi - f + u_prev_time[inner] / dt
    c = mu + 1.0 / dt
    K = op.center_bound + c
    trace = []
    wi = w[inner]
    delta = np.inf
    for sweep in range(1, options.max_inner + 1):
        R = op.apply(w, data) - c * wi + rhs
        new = wi + R / K
        if options.one_phase:
            np.maximum(new, 0.0, out=new)
        delta = float(np.max(np.abs(new - wi))) if new.size else 0.0
        wi[...] = new
        if sweep % 100 == 0:
            trace.append(delta)
        if delta <= options.inner_tol:
            break
    else:
        if not trace or sweep % 100:
            trace.append(delta)
        raise SolverError(f"inner iteration did not converge at level {k}: residual {delta:.3e}",
                          trace=trace, eps=eps, level=k)
    return w, {"sweeps": sweep, "residual": delta}


def monotone_iteration(problem: ProblemSpec, eps: float, k: int, u_prev_time: np.ndarray,
                       start: np.ndarray | None = None, state: ShiftState | None = None,
                       options: SolverOptions = SolverOptions(), op=None,
                       keep_iterates: bool = False):
    """Outer mu-shift iteration at level ``k``; returns ``(u, info)``.

    ``start`` defaults to the previous level; boundary values are reset to
    the Dirichlet data at ``t_k``.
    """
    grid = problem.grid
    inner = _interior(grid.dim)
    if state is None:
        state = ShiftState(choose_mu(problem.reaction, eps, grid.dt), eps, problem.reaction)
    op = op or DiscreteOperator(problem.operator, grid)
    f = problem.forcing_at(k, eps)[inner]
    bc = problem.dirichlet_at(k)
    u = np.array(u_prev_time if start is None else start, dtype=float)
    mask = np.ones(grid.space_shape, dtype=bool)
    mask[inner] = False
    u[mask] = bc[mask]
    defect, sweeps, change = 0.0, 0, np.inf
    iterates = [u.copy()] if keep_iterates else None
    for it in range(1, options.max_outer + 1):
        state.k = it - 1
        w, info = shifted_step_solve(problem, eps, state, u_prev_time, u, k, options, op, f)
        sweeps += info["sweeps"]
        diff = w[inner] - u[inner]
        if diff.size:
            defect = max(defect, float(np.max(-diff)))
            change = float(np.max(np.abs(diff)))
        else:
            change = 0.0
        u = w
        if keep_iterates:
            iterates.append(u.copy())
        if state.g_is_zero or change < options.outer_tol:
            break
    else:
        raise SolverError(f"outer iteration did not converge at level {k}: change {change:.3e}",
                          eps=eps, level=k)
    out = {"level": k, "outer": it, "sweeps": sweeps, "residual": info["residual"],
           "change": change, "monotonicity_defect": defect}
    if keep_iterates:
        out["iterates"] = iterates
    return u, out


def estimate_l_guess(problem: ProblemSpec, eps: float, options: SolverOptions) -> float | None:
    """Spatial Lipschitz estimate from a run on the grid coarsened by 2 in space."""
    g = problem.grid
    if (g.nx - 1) % 2 or (g.nt - 1) % 4 or g.nx < 9 or g.nt < 9:
        return None
    coarse = replace(g, nx=(g.nx - 1) // 2 + 1, nt=(g.nt - 1) // 4 + 1)
    pb = replace(problem, grid=coarse)
    opts = replace(options, resolution_guard=False)
    fld = solve_epsilon_problem(pb, eps, opts, check_assumptions=False)
    v = fld.values
    L = 0.0
    for ax in range(1, coarse.dim + 1):
        L = max(L, float(np.max(np.abs(np.diff(v, axis=ax)))) / coarse.h)
    return L


def solve_epsilon_problem(problem: ProblemSpec, eps: float,
                          options: SolverOptions = SolverOptions(), *,
                          initial: np.ndarray | None = None,
                          check_assumptions: bool = True,
                          keep_iterates: bool = False) -> SolutionField:
    """Time-march the eps-problem from ``u(., 0) = phi(., 0)``.

    ``initial`` overrides the ``t = 0`` slice (for oracle tests); this
    bypasses the assumption check.
    """
    grid = problem.grid
    if check_assumptions and initial is None:
        rep = validate_assumptions(problem, [eps])
        if not rep.passed:
            failed = [k for k, r in rep.results.items() if not r["passed"]]
            raise AssumptionError(f"assumptions {failed} fail", eps=eps)
    mu = choose_mu(problem.reaction, eps, grid.dt)
    state = ShiftState(mu, eps, problem.reaction)
    op = DiscreteOperator(problem.operator, grid)
    u = np.empty(grid.shape)
    u[0] = problem.dirichlet_at(0) if initial is None else initial
    levels = []
    iterates = {}
    for k in range(1, grid.nt):
        try:
            u[k], info = monotone_iteration(problem, eps, k, u[k - 1], None, state, options, op,
                                            keep_iterates)
        except SolverError as exc:
            exc.eps = eps
            raise
        if keep_iterates:
            iterates[k] = info.pop("iterates")
        levels.append(info)
    diag = {
        "eps": eps,
        "mu": mu,
        "one_phase": options.one_phase,
        "sup": float(u.max()),
        "min": float(u.min()),
        "max_outer": max((lv["outer"] for lv in levels), default=0),
        "total_sweeps": sum(lv["sweeps"] for lv in levels),
        "max_residual": max((lv["residual"] for lv in levels), default=0.0),
        "max_monotonicity_defect": max((lv["monotonicity_defect"] for lv in levels), default=0.0),
        "levels": levels,
    }
    if options.resolution_guard:
        L = options.l_guess if options.l_guess is not None else estimate_l_guess(
            problem, eps, options)
        diag["l_guess"] = L
        diag["resolution_warning"] = bool(L is not None and eps < 10 * grid.h * L)
    fld = SolutionField(grid, u, eps, diag)
    if keep_iterates:
        fld.diagnostics["iterates"] = iterates
    return fld
