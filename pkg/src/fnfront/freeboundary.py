"""Free-boundary extraction and the quantitative audits of the limit field:
non-degeneracy, dyadic growth classes, quadratic growth and porosity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import GridIndexSet, SpaceTimeGrid, lower_cylinder, spatial_stencil
from .solver import SolutionField

_TOL = 1e-9


class AuditError(ValueError):
    pass


def mu0(c0: float, n: int, Lam: float) -> float:
    """Non-degeneracy constant ``min(c0/2, c0/(4 n Lam))``."""
    if not (c0 > 0 and n >= 1 and Lam > 0):
        raise AuditError(f"mu0 needs c0 > 0, n >= 1, Lam > 0 (got {c0}, {n}, {Lam})")
    return min(c0 / 2.0, c0 / (4.0 * n * Lam))


def doubling_constant(mu: float) -> float:
    """``M = 4 max(1, 1/mu0)``."""
    return 4.0 * max(1.0, 1.0 / mu)


def positivity_threshold(eps_min: float | None, outer_tol: float = 1e-8) -> float:
    return max(10.0 * outer_tol, (eps_min or 0.0) / 10.0)


def kappa(c1: float, upsilon: float) -> float:
    return max(1.0, c1, upsilon)


def _lateral_distance(grid: SpaceTimeGrid) -> np.ndarray:
    """Spatial distance of each node to the lateral boundary."""
    x = grid.x
    d1 = np.minimum(x, grid.extent - x)
    out = d1
    for _ in range(grid.dim - 1):
        out = np.minimum.outer(out, d1)
    return out


def _neighbour_any(mask: np.ndarray, dim: int) -> np.ndarray:
    """True where some stencil neighbour (same slice) is True."""
    out = np.zeros_like(mask)
    pad = np.pad(mask, 1, constant_values=False)
    for off in spatial_stencil(dim):
        out |= pad[tuple(slice(1 + o, 1 + o + n) for o, n in zip(off, mask.shape))]
    return out


@dataclass
class FreeBoundarySlice:
    grid: SpaceTimeGrid
    k: int
    theta: float
    positive: np.ndarray
    fb: np.ndarray

    @property
    def t0(self) -> float:
        return float(self.grid.t[self.k])

    @property
    def fb_indices(self) -> np.ndarray:
        return np.argwhere(self.fb)

    @property
    def fb_points(self) -> np.ndarray:
        return self.fb_indices * self.grid.h

    def to_rows(self):
        return [[float(v) for v in p] + [self.t0] for p in self.fb_points]


def free_boundary_mask_slice(u: np.ndarray, theta: float, dim: int):
    pos = u > theta
    fb = (~pos & _neighbour_any(pos, dim)) | (pos & _neighbour_any(~pos, dim))
    return pos, fb


def extract_free_boundary(field: SolutionField, t0: float, theta: float | None = None,
                          outer_tol: float = 1e-8) -> FreeBoundarySlice:
    g = field.grid
    k = g.level_of(t0)
    if theta is None:
        theta = positivity_threshold(field.eps, outer_tol)
    pos, fb = free_boundary_mask_slice(field.values[k], theta, g.dim)
    return FreeBoundarySlice(g, k, theta, pos, fb)


def free_boundary_mask(field: SolutionField, theta: float) -> GridIndexSet:
    """Free-boundary nodes at every level."""
    g = field.grid
    out = np.zeros(g.shape, dtype=bool)
    for k in range(g.nt):
        out[k] = free_boundary_mask_slice(field.values[k], theta, g.dim)[1]
    return GridIndexSet(g, out)


# ---------------------------------------------------------------- d(x, t)

class _EDTCache:
    """Per-level Euclidean distance (in x units) to the nearest node with u <= theta."""

    def __init__(self, field: SolutionField, theta: float):
        self.pos = field.values > theta
        self.h = field.grid.h
        self._cache = {}

    def __call__(self, k):
        if k not in self._cache:
            p = self.pos[k]
            if p.all():
                self._cache[k] = np.full(p.shape, np.inf)
            else:
                self._cache[k] = ndimage.distance_transform_edt(p, sampling=self.h)
        return self._cache[k]


def cylinder_distance_level(field: SolutionField, k: int, theta: float,
                            cache: _EDTCache | None = None):
    """``(d, cap)`` on level ``k``.

    ``d = sup{r : Q_r(x, t) in {u > theta}}`` over grid nodes, where
    ``Q_r`` must also stay inside the domain (``r <= lateral distance``,
    ``r^2 <= t``); ``cap`` is that domain limit.
    """
    g = field.grid
    cache = cache or _EDTCache(field, theta)
    cap = np.minimum(_lateral_distance(g), math.sqrt(g.t[k]))
    d = np.where(cache.pos[k], cap, 0.0)
    dk = 0
    while True:
        s = math.sqrt(dk * g.dt)
        if s >= d.max() or (k - dk < 0 and k + dk >= g.nt):
            break
        for kk in {k - dk, k + dk}:
            if 0 <= kk < g.nt:
                d = np.minimum(d, np.maximum(cache(kk), s))
        dk += 1
    return d, cap


def cylinder_distance(field: SolutionField, node, theta: float) -> float:
    node = field.grid.check_node(node)
    d, _ = cylinder_distance_level(field, node[0], theta)
    return float(d[node[1:]])


# ---------------------------------------------------------------- audits

def _admissible(grid: SpaceTimeGrid, node, r: float) -> bool:
    """Closed ``Q^-_r(node)`` lies inside the grid."""
    lat = min(min(i, grid.nx - 1 - i) for i in node[1:]) * grid.h
    return r <= lat * (1 + _TOL) and r * r <= grid.t[node[0]] * (1 + _TOL)


def dyadic_radii(r_min: float, r_max: float) -> list:
    out, r = [], r_min
    while r <= r_max * (1 + _TOL):
        out.append(r)
        r *= 2
    return out


def boundary_ratio_range(values: np.ndarray, grid: SpaceTimeGrid, node, r: float):
    """``(min, max)`` of ``(u - u(node))/r^2`` over the discrete ``d_p Q^-_r(node)``."""
    cyl = lower_cylinder(node, r, grid)
    b = values[cyl.boundary.mask] - values[tuple(node)]
    return float(b.min()) / r**2, float(b.max()) / r**2


def barrier_psi(grid: SpaceTimeGrid, node, c0: float, n: int, Lam: float) -> np.ndarray:
    """``(c0/(4 n Lam)) |x - z|^2 - (c0/2)(t - s)`` on the grid."""
    node = grid.check_node(node)
    X = grid.coords()
    d2 = sum((Xi - node[i + 1] * grid.h) ** 2 for i, Xi in enumerate(X))
    t = grid.t.reshape((-1,) + (1,) * grid.dim)
    return (c0 / (4.0 * n * Lam)) * d2[None] - 0.5 * c0 * (t - grid.t[node[0]])


def nondegeneracy_audit(field: SolutionField, fbs: FreeBoundarySlice, radii,
                        points=None) -> dict:
    """Ratios ``(max_{d_p Q^-_r} u - u(z)) / r^2`` at free-boundary points."""
    g = field.grid
    if any(r < 2 * g.h * (1 - _TOL) for r in radii):
        raise AuditError("radii must be >= 2h")
    pts = fbs.fb_indices if points is None else np.asarray(points)
    rows, exps, skipped = [], [], 0
    for p in pts:
        node = (fbs.k,) + tuple(int(v) for v in p)
        if field.values[node] > fbs.theta and not fbs.fb[tuple(p)]:
            continue
        ok = [r for r in radii if _admissible(g, node, r)]
        if not ok:
            skipped += 1
            continue
        incs = []
        for r in ok:
            ratio = boundary_ratio_range(field.values, g, node, r)[1]
            incs.append(ratio * r * r)
            rows.append({"point": [int(v) for v in p], "r": r, "ratio": ratio})
        pos = [(r, v) for r, v in zip(ok, incs) if v > 0]
        if len(pos) >= 2:
            exps.append(float(np.polyfit(np.log([a for a, _ in pos]),
                                         np.log([b for _, b in pos]), 1)[0]))
    ratios = [row["ratio"] for row in rows]
    return {
        "t0": fbs.t0,
        "rows": rows,
        "points": len(pts),
        "skipped": skipped,
        "min_ratio": min(ratios) if ratios else None,
        "exponents": exps,
        "median_exponent": float(np.median(exps)) if exps else None,
    }


def dyadic_classes(field: SolutionField, node, mu: float, kap: float = 1.0,
                   theta: float = 0.0) -> dict:
    """Sup values ``S(2^-j)`` of ``u/kappa`` on closed lower cylinders and the
    doubling set ``H = {j : S(2^-j) <= M S(2^-j-1)}``."""
    g = field.grid
    node = g.check_node(node)
    M = doubling_constant(mu)
    j, flagged = 0, False
    while not _admissible(g, node, 2.0 ** -j):
        j += 1
        flagged = True
        if 2.0 ** -j < g.h * (1 - _TOL):
            raise AuditError(f"no resolvable dyadic radius at {node}")
    S = {}
    while 2.0 ** -j >= g.h * (1 - _TOL):
        cyl = lower_cylinder(node, 2.0 ** -j, g)
        S[j] = float(field.values[cyl.closure.mask].max()) / kap
        j += 1
    js = sorted(S)
    H = [a for a in js[:-1] if S[a] <= M * S[a + 1]]
    C1 = max((S[a + 1] / 2.0 ** (-2 * a) for a in H), default=0.0)
    first = js[0]
    at_fb = field.values[node] <= theta
    return {
        "node": list(node),
        "M": M,
        "S": {str(a): S[a] for a in js},
        "H": H,
        "C1_hat": C1,
        "start_j": first,
        "start_flagged": flagged,
        "first_in_H": (first in H) if at_fb else None,
    }


def _fit_envelope(d: np.ndarray, u: np.ndarray, h: float):
    """Slope of log(max u in an h-wide d bin) against log(d at that max)."""
    bins = np.floor(d / h).astype(int)
    xs, ys = [], []
    for b in np.unique(bins):
        sel = bins == b
        i = np.argmax(u[sel])
        if u[sel][i] > 0:
            xs.append(d[sel][i])
            ys.append(u[sel][i])
    if len(xs) < 2:
        return None
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def growth_audit(field: SolutionField, K: GridIndexSet, theta: float, kap: float = 1.0,
                 max_levels: int = 48, subquadratic: float = 1.7) -> dict:
    """``C0 = max u/d^2`` and the growth exponent over nodes of ``K`` with
    ``d > 2h`` set by the zero set (not by the domain)."""
    g = field.grid
    levels = np.flatnonzero(K.mask.reshape(g.nt, -1).any(axis=1))
    if len(levels) > max_levels:
        levels = levels[np.linspace(0, len(levels) - 1, max_levels).round().astype(int)]
    cache = _EDTCache(field, theta)
    us, ds = [], []
    for k in levels:
        d, cap = cylinder_distance_level(field, int(k), theta, cache)
        sel = K.mask[k] & (d > 2 * g.h * (1 + _TOL)) & (d < cap * (1 - _TOL))
        us.append(field.values[k][sel])
        ds.append(d[sel])
    u = np.concatenate(us) if us else np.empty(0)
    d = np.concatenate(ds) if ds else np.empty(0)
    if u.size == 0:
        raise AuditError("no nodes with d > 2h")
    C0_raw = float(np.max(u / d**2))
    expo = _fit_envelope(d, u, g.h)
    return {
        "nodes": int(u.size),
        "levels": [int(k) for k in levels],
        "C0_hat_raw": C0_raw,
        "C0_hat": C0_raw / kap,
        "kappa": kap,
        "exponent": expo,
        "subquadratic": bool(expo is None or expo < subquadratic),
    }


def doubling_chain(field: SolutionField, fbs: FreeBoundarySlice, radii) -> dict:
    """``max_z sup_{Q^-_r(z)} u / r^2`` over free-boundary points of a slice."""
    g = field.grid
    out = []
    for r in radii:
        best = None
        for p in fbs.fb_indices:
            node = (fbs.k,) + tuple(int(v) for v in p)
            if not _admissible(g, node, r):
                continue
            s = float(field.values[lower_cylinder(node, r, g).closure.mask].max()) / r**2
            best = s if best is None else max(best, s)
        if best is not None:
            out.append({"r": r, "sup_over_r2": best})
    return {"t0": fbs.t0, "rows": out,
            "sixteen_C1_hat": max((row["sup_over_r2"] for row in out), default=None)}


def _ball_offsets(dim: int, rad: int):
    rng = np.arange(-rad, rad + 1)
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    return np.stack([gi.ravel() for gi in grids], axis=1)


def porosity_estimate(fb: np.ndarray, h: float, R: float, points=None) -> dict:
    """Grid porosity of the node set ``fb`` (boolean slice mask).

    For each point ``x`` of the set and ``r in {4h, 8h, ..., R}`` the largest
    grid ball ``B_rho(y)`` inside ``B_r(x)`` avoiding the set has
    ``rho = max_y min(dist(y, E), r - |y - x|)``.
    """
    fb = np.asarray(fb, dtype=bool)
    if not fb.any():
        raise AuditError("no free boundary")
    if R < 4 * h * (1 - _TOL):
        raise AuditError("R must be >= 4h")
    dim = fb.ndim
    dist = ndimage.distance_transform_edt(~fb, sampling=h)
    pts = np.argwhere(fb) if points is None else np.asarray(points)
    radii = dyadic_radii(4 * h, R)
    rows = []
    shape = np.array(fb.shape)
    for r in radii:
        rad = int(math.floor(r / h + _TOL))
        offs = _ball_offsets(dim, rad)
        od = np.sqrt((offs**2).sum(axis=1)) * h
        keep = od < r * (1 - _TOL)
        offs, od = offs[keep], od[keep]
        for p in pts:
            y = p + offs
            inside = np.all((y >= 0) & (y < shape), axis=1)
            yy, dd = y[inside], od[inside]
            rho = np.minimum(dist[tuple(yy.T)], r - dd)
            i = int(np.argmax(rho))
            rows.append({"point": [int(v) for v in p], "r": r, "ratio": float(rho[i] / r),
                         "center": [int(v) for v in yy[i]]})
    ratios = [row["ratio"] for row in rows]
    return {
        "radii": radii,
        "rows": rows,
        "delta_hat": min(ratios),
        "failures": sum(1 for v in ratios if v <= 0),
    }


def predicted_porosity(mu: float, kap: float, C0: float) -> float:
    """``(1/2) sqrt(mu0 / (kappa C0))`` clamped to ``(0, 1/2]``."""
    if C0 <= 0:
        raise AuditError("C0 must be positive")
    if mu <= 0 or kap <= 0:
        raise AuditError("mu0 and kappa must be positive")
    return min(0.5, 0.5 * math.sqrt(mu / (kap * C0)))


def ball_construction_check(values_slice: np.ndarray, fb: np.ndarray, h: float,
                            point, r: float, delta: float | None = None) -> dict:
    """Shifted-ball construction at one ``(z, r)``.

    ``x1`` maximises ``u`` over nodes with ``r - h <= |x - z| <= r``;
    ``B_{dr/2}(y)`` with ``y`` on ``[z, x1]``, ``|y - x1| = dr/2`` and
    ``d = min(delta, dist(x1, E)/r)`` must avoid ``E`` and lie in ``B_r(z)``.
    """
    z = np.asarray(point, dtype=float)
    dim = fb.ndim
    idx = np.indices(fb.shape).reshape(dim, -1).T
    dz = np.sqrt(((idx - z) ** 2).sum(axis=1)) * h
    shell = (dz <= r * (1 + _TOL)) & (dz >= r - h * (1 + _TOL))
    if not shell.any():
        raise AuditError("empty shell")
    cand = idx[shell]
    x1 = cand[int(np.argmax(values_slice[tuple(cand.T)]))]
    dist = ndimage.distance_transform_edt(~fb, sampling=h)
    dloc = float(dist[tuple(x1)]) / r
    d = dloc if delta is None else min(delta, dloc)
    rho = 0.5 * d * r
    direction = (z - x1) / max(np.linalg.norm(z - x1), 1e-300)
    y = x1 + direction * rho / h
    dy = np.sqrt(((idx - y) ** 2).sum(axis=1)) * h
    ball = dy < rho * (1 - _TOL)
    nodes = idx[ball]
    avoids = not fb[tuple(nodes.T)].any() if len(nodes) else True
    inside = bool(np.all(dz[ball] <= r * (1 + _TOL)))
    return {"point": [int(v) for v in point], "r": r, "x1": [int(v) for v in x1],
            "delta": d, "ball_nodes": int(len(nodes)), "avoids_fb": bool(avoids),
            "inside": inside, "passed": bool(avoids and inside and d > 0)}


@dataclass
class FreeBoundaryReport:
    mu0: float
    kappa: float
    theta: float
    slices: list = field(default_factory=list)
    growth: dict = field(default_factory=dict)
    dyadic: list = field(default_factory=list)
    predicted_half_delta: float | None = None
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self):
        return {
            "passed": self.passed,
            "failures": self.failures,
            "mu0": self.mu0,
            "M": doubling_constant(self.mu0),
            "kappa": self.kappa,
            "theta": self.theta,
            "growth": self.growth,
            "predicted_half_delta": self.predicted_half_delta,
            "dyadic": self.dyadic,
            "slices": self.slices,
        }


def _subsample(points: np.ndarray, n: int) -> np.ndarray:
    if len(points) <= n:
        return points
    return points[np.linspace(0, len(points) - 1, n).round().astype(int)]


def default_levels(grid: SpaceTimeGrid, count: int = 4) -> list:
    return [float(grid.t[int(round(q * (grid.nt - 1) / count))]) for q in range(1, count + 1)]


def audit_free_boundary(field: SolutionField, problem, *, upsilon: float, t0_list=None,
                        radii=None, R=None, margin=None, outer_tol: float = 1e-8,
                        max_points: int = 32) -> FreeBoundaryReport:
    """All free-boundary audits of one (limit) field."""
    from .regularity import compact_set

    g = field.grid
    theta = positivity_threshold(field.eps, outer_tol)
    m0 = mu0(problem.forcing.c0, g.dim, problem.operator.Lam)
    kap = kappa(problem.forcing.c1, upsilon)
    K = compact_set(g, margin)
    rep = FreeBoundaryReport(m0, kap, theta)
    radii = list(radii) if radii else dyadic_radii(2 * g.h, 0.25 * g.extent)
    R = R if R is not None else max(0.1 * g.extent, 4 * g.h)
    failures = []
    try:
        rep.growth = growth_audit(field, K, theta, kap)
        rep.predicted_half_delta = predicted_porosity(m0, kap, rep.growth["C0_hat"])
        if rep.growth["subquadratic"]:
            failures.append("growth: sub-quadratic exponent")
    except AuditError as exc:
        rep.growth = {"error": str(exc)}
        failures.append(f"growth: {exc}")
    for t0 in (t0_list or default_levels(g)):
        fbs = extract_free_boundary(field, t0, theta)
        inK = fbs.fb & K.mask[fbs.k]
        pts = _subsample(np.argwhere(inK), max_points)
        entry = {"t0": fbs.t0, "k": fbs.k, "fb_count": int(fbs.fb.sum()),
                 "fb_points": [[float(v) for v in p] for p in fbs.fb_points],
                 "audited_points": len(pts)}
        if len(pts) == 0:
            entry["note"] = "no free boundary point in K"
            rep.slices.append(entry)
            continue
        nd = nondegeneracy_audit(field, fbs, radii, pts)
        entry["nondegeneracy"] = nd
        if nd["min_ratio"] is not None and nd["min_ratio"] <= 0:
            failures.append(f"nondegeneracy at t0={fbs.t0}: ratio {nd['min_ratio']}")
        entry["doubling_chain"] = doubling_chain(field, FreeBoundarySlice(
            g, fbs.k, theta, fbs.positive, _point_mask(fbs.fb.shape, pts)), radii)
        por = porosity_estimate(fbs.fb, g.h, R, pts)
        entry["porosity"] = por
        if por["failures"]:
            failures.append(f"porosity at t0={fbs.t0}: {por['failures']} zero ratios")
        checks = [ball_construction_check(field.values[fbs.k], fbs.fb, g.h, p, r)
                  for r in por["radii"] for p in pts]
        bad = [c for c in checks if not c["passed"]]
        entry["ball_construction"] = {"checked": len(checks), "failed": len(bad),
                                      "failures": bad}
        if bad:
            failures.append(f"ball construction at t0={fbs.t0}: {len(bad)} failures")
        dy = []
        for p in pts:
            try:
                dy.append(dyadic_classes(field, (fbs.k,) + tuple(int(v) for v in p), m0, kap,
                                         theta))
            except AuditError as exc:
                dy.append({"node": [fbs.k] + [int(v) for v in p], "error": str(exc)})
        rep.dyadic.extend(dy)
        rep.slices.append(entry)
    rep.failures = failures
    return rep


def _point_mask(shape, pts) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for p in pts:
        m[tuple(p)] = True
    return m
