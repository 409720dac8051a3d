"""The eps -> 0 sweep and measured regularity seminorms."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import GridError, GridIndexSet, SpaceTimeGrid
from .operators import DiscreteOperator
from .problem import ProblemSpec
from .solver import SolutionField, SolverError, SolverOptions, solve_epsilon_problem


def default_margin(grid: SpaceTimeGrid) -> float:
    return max(4 * grid.h, 0.1 * grid.extent)


def compact_set(grid: SpaceTimeGrid, margin: float | None = None) -> GridIndexSet:
    """Nodes at parabolic distance >= margin from the parabolic boundary:
    spatial distance to the lateral boundary >= margin and ``t >= margin^2``."""
    m = default_margin(grid) if margin is None else margin
    x = grid.x
    ok_x = (x >= m - 1e-12) & (x <= grid.extent - m + 1e-12)
    ok_t = grid.t >= m * m - 1e-12
    mask = ok_t.reshape((-1,) + (1,) * grid.dim)
    for ax in range(grid.dim):
        shape = [1] * (grid.dim + 1)
        shape[ax + 1] = grid.nx
        mask = mask & ok_x.reshape(shape)
    return GridIndexSet(grid, mask)


def _check_K(field, K):
    g = field.grid
    if len(K) == 0:
        raise GridError("K is empty")
    m = K.mask
    for ax in range(1, g.dim + 1):
        lo = np.take(m, 0, axis=ax)
        hi = np.take(m, g.nx - 1, axis=ax)
        if lo.any() or hi.any():
            raise GridError("K must keep a margin of at least h from the lateral boundary")


def _half_offsets(dim, reach):
    """Spatial offsets with 0 < |o| <= reach, one of each +/- pair."""
    out = []
    for o in itertools.product(range(-reach, reach + 1), repeat=dim):
        if not any(o) or sum(v * v for v in o) > reach * reach:
            continue
        first = next(v for v in o if v)
        if first > 0:
            out.append(o)
    return out


def _pair_slices(shape, off):
    a, b = [], []
    for n, o in zip(shape, off):
        if o >= 0:
            a.append(slice(0, n - o))
            b.append(slice(o, n))
        else:
            a.append(slice(-o, n))
            b.append(slice(0, n + o))
    return tuple(a), tuple(b)


def lip_space_seminorm(field: SolutionField, K: GridIndexSet, reach: int = 4) -> float:
    """Largest same-time difference quotient over node pairs in ``K`` at
    distance at most ``reach * h``."""
    _check_K(field, K)
    g = field.grid
    u, m = field.values, K.mask
    best = 0.0
    for off in _half_offsets(g.dim, reach):
        a, b = _pair_slices(g.shape, (0,) + off)
        both = m[a] & m[b]
        if not both.any():
            continue
        q = np.abs(u[b] - u[a])[both] / (g.h * math.sqrt(sum(o * o for o in off)))
        best = max(best, float(q.max()))
    return best


def hoelder_time_seminorm(field: SolutionField, K: GridIndexSet, min_dyadic: int = 3):
    """``(C_hat, exponent, table)`` from time increments over dyadic ``dt``.

    ``C_hat`` is the largest ``|u(x,t+s) - u(x,t)| / s^(1/2)``; ``exponent``
    is the least-squares slope of ``log max|du|`` against ``log s``.
    """
    if len(K) == 0:
        raise GridError("K is empty")
    g = field.grid
    levels = np.flatnonzero(K.mask.reshape(g.nt, -1).any(axis=1))
    if levels[-1] - levels[0] + 1 < 8:
        raise GridError("K must span at least 8 time levels")
    u, m = field.values, K.mask
    rows = []
    step = 1
    while step <= levels[-1] - levels[0]:
        both = m[:-step] & m[step:]
        if both.any():
            du = np.abs(u[step:] - u[:-step])[both]
            s = step * g.dt
            rows.append({"dt": s, "max_increment": float(du.max()),
                         "ratio": float(du.max() / math.sqrt(s))})
        step *= 2
    if len(rows) < min_dyadic:
        raise GridError(f"only {len(rows)} dyadic time steps resolvable in K")
    C = max(r["ratio"] for r in rows)
    pos = [r for r in rows if r["max_increment"] > 0]
    exponent = None
    if len(pos) >= 2:
        exponent = float(np.polyfit(np.log([r["dt"] for r in pos]),
                                    np.log([r["max_increment"] for r in pos]), 1)[0])
    return C, exponent, rows


def time_monotonicity_defect(field: SolutionField, K: GridIndexSet | None = None) -> float:
    """``max(u(x,t) - u(x,t+dt), 0)`` over pairs with both nodes in ``K``."""
    u = field.values
    dec = u[:-1] - u[1:]
    if K is not None:
        both = K.mask[:-1] & K.mask[1:]
        dec = dec[both]
    return float(max(0.0, dec.max())) if dec.size else 0.0


def pde_residual(field: SolutionField, problem: ProblemSpec, region: np.ndarray) -> float:
    """Max of ``|F(D^2_h u) - d_t u - f|`` over interior nodes in ``region``."""
    g = field.grid
    op = DiscreteOperator(problem.operator, g)
    inner = (slice(1, -1),) * g.dim
    eps = field.eps if field.eps is not None else 0.0
    worst = 0.0
    u = field.values
    for k in range(1, g.nt):
        sel = region[k][inner]
        if not sel.any():
            continue
        r = (op.apply(u[k], op.level_data(g.t[k])) - (u[k][inner] - u[k - 1][inner]) / g.dt
             - problem.forcing_at(k, eps)[inner])
        worst = max(worst, float(np.max(np.abs(r[sel]))))
    return worst


@dataclass
class RegularityReport:
    eps: list
    margin: float
    tau: float
    per_eps: list = field(default_factory=list)
    cauchy: list = field(default_factory=list)
    upsilon_hat: float = 0.0
    limit: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "eps": self.eps,
            "compact_set": {"margin": self.margin, "tau": self.tau,
                            "description": "nodes with lateral distance >= margin and t >= margin^2"},
            "per_eps": self.per_eps,
            "cauchy_residuals": self.cauchy,
            "upsilon_hat": self.upsilon_hat,
            "limit": self.limit,
        }


def _metrics(fld: SolutionField, K: GridIndexSet) -> dict:
    C, expo, _ = hoelder_time_seminorm(fld, K)
    d = fld.diagnostics
    return {
        "eps": fld.eps,
        "sup_norm": fld.sup,
        "min": fld.inf,
        "lip_space": lip_space_seminorm(fld, K),
        "hoelder_time": {"C_hat": C, "exponent": expo},
        "time_monotonicity_defect": time_monotonicity_defect(fld),
        "max_outer": d.get("max_outer"),
        "max_monotonicity_defect": d.get("max_monotonicity_defect"),
        "max_residual": d.get("max_residual"),
        "mu": d.get("mu"),
        "resolution_warning": d.get("resolution_warning"),
    }


def epsilon_sweep(problem: ProblemSpec, eps_list, options: SolverOptions = SolverOptions(),
                  margin: float | None = None, workers: int = 1, check_assumptions=True):
    """Solve for every eps (strictly decreasing) on one grid.

    Returns ``(report, limit_field, fields)``; the limit is the smallest-eps
    solution.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 1 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    grid = problem.grid
    margin = default_margin(grid) if margin is None else margin
    K = compact_set(grid, margin)

    def run(e):
        try:
            return solve_epsilon_problem(problem, e, options, check_assumptions=check_assumptions)
        except SolverError as exc:
            exc.eps = e
            raise

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(pool.map(run, eps_list))
    else:
        fields = [run(e) for e in eps_list]

    rep = RegularityReport(eps_list, margin, margin / 2)
    rep.per_eps = [_metrics(f, K) for f in fields]
    for a, b in zip(fields, fields[1:]):
        diff = np.abs(a.values - b.values)[K.mask]
        rep.cauchy.append({"eps_pair": [a.eps, b.eps], "sup_diff": float(diff.max())})
    rep.upsilon_hat = max(f.sup for f in fields)
    limit = fields[-1]
    emin = eps_list[-1]
    threshold = 2 * emin
    region = (limit.values > threshold) & K.mask
    # the reaction layer of every eps in the sweep lies below max(eps)
    wide = (limit.values > 2 * max(eps_list)) & K.mask
    rep.limit = {
        "eps": emin,
        **{k: v for k, v in rep.per_eps[-1].items() if k != "eps"},
        "time_monotonicity_defect_K": time_monotonicity_defect(limit, K),
        "pde_residual_positive_set": pde_residual(limit, problem, region),
        "pde_residual_region_size": int(region.sum()),
        "pde_residual_threshold": threshold,
        "pde_residual_above_max_eps": pde_residual(limit, problem, wide),
        "pde_residual_above_max_eps_threshold": 2 * max(eps_list),
        "forcing_c0": problem.forcing.c0,
        "forcing_c1": problem.forcing.c1,
    }
    return rep, limit, fields
