"""Uniform space-time grids, parabolic cylinders and parabolic boundaries.

Nodes are addressed by integer index tuples ``(k, i)`` in 1D and
``(k, i, j)`` in 2D, where ``k`` is the time level.  Index sets are boolean
masks of shape ``(nt, nx)`` or ``(nt, nx, nx)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# relative slack for floating comparisons of squared distances / times
_TOL = 1e-9


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform grid on ``[0, extent]^dim x [0, T]``.

    ``nx`` counts spatial nodes per axis including both boundary nodes,
    ``nt`` counts time levels including ``t = 0``.
    """

    dim: int
    nx: int
    nt: int
    T: float
    extent: float = 1.0
    parabolic_scaling_factor: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        if self.nx < 3:
            raise GridError("nx must be >= 3")
        if self.nt < 2:
            raise GridError("nt must be >= 2")
        if not (self.T > 0 and self.extent > 0):
            raise GridError("T and extent must be positive")
        if self.dt > self.h**2 * self.parabolic_scaling_factor * (1 + _TOL):
            raise GridError(
                f"dt={self.dt:.3g} exceeds h^2*factor="
                f"{self.h**2 * self.parabolic_scaling_factor:.3g}"
            )

    @classmethod
    def from_config(cls, block: dict) -> "SpaceTimeGrid":
        return cls(
            dim=int(block["dim"]),
            nx=int(block["nx"]),
            nt=int(block["nt"]),
            T=float(block["T"]),
            extent=float(block.get("extent", 1.0)),
            parabolic_scaling_factor=float(block.get("parabolic_scaling_factor", 1.0)),
        )

    @property
    def h(self) -> float:
        return self.extent / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.T / (self.nt - 1)

    @property
    def space_shape(self) -> tuple:
        return (self.nx,) * self.dim

    @property
    def shape(self) -> tuple:
        return (self.nt,) + self.space_shape

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.extent, self.nx)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt)

    def coords(self) -> list[np.ndarray]:
        """Spatial coordinate arrays broadcast to ``space_shape``."""
        return list(np.meshgrid(*([self.x] * self.dim), indexing="ij"))

    def node_count(self) -> int:
        return int(np.prod(self.shape))

    def check_node(self, node) -> tuple:
        node = tuple(int(v) for v in node)
        if len(node) != self.dim + 1:
            raise GridError(f"node {node} has wrong arity for dim={self.dim}")
        for v, n in zip(node, self.shape):
            if not 0 <= v < n:
                raise GridError(f"node {node} outside grid")
        return node

    def level_of(self, t0: float) -> int:
        k = int(round(t0 / self.dt))
        if not 0 <= k < self.nt or abs(k * self.dt - t0) > 1e-9 * max(1.0, self.T):
            raise GridError(f"t0={t0} is not a grid level")
        return k

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "nx": self.nx,
            "nt": self.nt,
            "T": self.T,
            "extent": self.extent,
            "parabolic_scaling_factor": self.parabolic_scaling_factor,
        }


@dataclass(frozen=True)
class GridIndexSet:
    """A set of grid nodes stored as a read-only boolean mask."""

    grid: SpaceTimeGrid
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.grid.shape:
            raise GridError(f"mask shape {m.shape} != grid shape {self.grid.shape}")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.shape, dtype=bool))

    @classmethod
    def from_nodes(cls, grid, nodes):
        m = np.zeros(grid.shape, dtype=bool)
        for node in nodes:
            m[grid.check_node(node)] = True
        return cls(grid, m)

    def _other(self, other):
        if other.grid != self.grid:
            raise GridError("index sets live on different grids")
        return other.mask

    def __or__(self, other):
        return GridIndexSet(self.grid, self.mask | self._other(other))

    def __and__(self, other):
        return GridIndexSet(self.grid, self.mask & self._other(other))

    def __sub__(self, other):
        return GridIndexSet(self.grid, self.mask & ~self._other(other))

    def __invert__(self):
        return GridIndexSet(self.grid, ~self.mask)

    def __eq__(self, other):
        return isinstance(other, GridIndexSet) and other.grid == self.grid and bool(
            np.array_equal(self.mask, other.mask)
        )

    def __hash__(self):
        return hash((self.grid, self.mask.tobytes()))

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, node):
        return bool(self.mask[tuple(node)])

    def __iter__(self):
        return (tuple(int(v) for v in idx) for idx in np.argwhere(self.mask))

    def issubset(self, other) -> bool:
        return not np.any(self.mask & ~self._other(other))

    def nodes(self) -> np.ndarray:
        return np.argwhere(self.mask)


def spatial_stencil(dim: int) -> list[tuple]:
    """Offsets of the 3-point (1D) or 9-point (2D) spatial stencil, center excluded."""
    offs = [o for o in itertools.product((-1, 0, 1), repeat=dim) if any(o)]
    return offs


def parabolic_boundary(grid: SpaceTimeGrid) -> GridIndexSet:
    """Lateral boundary nodes at every level plus every node at ``t = 0``."""
    m = np.zeros(grid.shape, dtype=bool)
    m[0] = True
    for ax in range(1, grid.dim + 1):
        sl = [slice(None)] * (grid.dim + 1)
        sl[ax] = 0
        m[tuple(sl)] = True
        sl[ax] = -1
        m[tuple(sl)] = True
    return GridIndexSet(grid, m)


def interior(grid: SpaceTimeGrid) -> GridIndexSet:
    return ~parabolic_boundary(grid)


def _space_dist2(grid, center_space):
    """Squared distance from a node's spatial position, over the spatial grid."""
    d2 = np.zeros(grid.space_shape)
    for ax, c in enumerate(center_space):
        idx = np.arange(grid.nx) - c
        shape = [1] * grid.dim
        shape[ax] = grid.nx
        d2 = d2 + (idx.reshape(shape) * grid.h) ** 2
    return d2


def _cylinder_mask(grid, center, tau, *, closed, two_sided):
    k0 = center[0]
    t = grid.t
    t0 = t[k0]
    tau2 = tau * tau
    d2 = _space_dist2(grid, center[1:])
    eps = _TOL * tau2
    if closed:
        ball = d2 <= tau2 + eps
        lo = t >= t0 - tau2 - eps
        hi = t <= t0 + (tau2 + eps if two_sided else eps)
    else:
        ball = d2 < tau2 - eps
        lo = t > t0 - tau2 + eps
        hi = t < t0 + tau2 - eps if two_sided else t <= t0 + eps
    times = lo & hi
    return times.reshape((-1,) + (1,) * grid.dim) & ball[None]


@dataclass(frozen=True)
class Cylinder:
    """A grid-clipped parabolic cylinder and its discrete parabolic boundary.

    ``nodes`` follows the open ball / half-open time interval convention;
    ``closure`` uses the closed ball and closed time interval.  A node of
    ``nodes`` is parabolic-interior when all its spatial stencil neighbours at
    the same level and the node one level below lie in ``closure``;
    ``boundary`` is ``closure`` minus those interior nodes.
    """

    center: tuple
    tau: float
    nodes: GridIndexSet
    closure: GridIndexSet
    boundary: GridIndexSet

    @property
    def parabolic_interior(self) -> GridIndexSet:
        return self.closure - self.boundary


def _interior_of(grid, open_mask, closed_mask):
    """Nodes of open_mask whose stencil (space + one level back) is inside closed_mask."""
    ok = open_mask.copy()
    pad = [(1, 0)] + [(1, 1)] * grid.dim
    cm = np.pad(closed_mask, pad, constant_values=False)
    # previous time level
    prev = (slice(0, -1),) + tuple(slice(1, -1) for _ in range(grid.dim))
    ok &= cm[prev]
    for off in spatial_stencil(grid.dim):
        sl = (slice(1, None),) + tuple(
            slice(1 + o, cm.shape[a + 1] - 1 + o) for a, o in enumerate(off)
        )
        ok &= cm[sl]
    return ok


def lower_cylinder(center, tau: float, grid: SpaceTimeGrid) -> Cylinder:
    """``Q^-_tau(center) = B_tau(x0) x (t0 - tau^2, t0]`` clipped to the grid."""
    center = grid.check_node(center)
    if tau < grid.h * (1 - _TOL):
        raise GridError(f"unresolvable radius tau={tau} < h={grid.h}")
    open_m = _cylinder_mask(grid, center, tau, closed=False, two_sided=False)
    closed_m = _cylinder_mask(grid, center, tau, closed=True, two_sided=False)
    inner = _interior_of(grid, open_m, closed_m)
    return Cylinder(
        center,
        tau,
        GridIndexSet(grid, open_m),
        GridIndexSet(grid, closed_m),
        GridIndexSet(grid, closed_m & ~inner),
    )


def full_cylinder(center, tau: float, grid: SpaceTimeGrid) -> GridIndexSet:
    """``Q_tau(center) = B_tau(x0) x (t0 - tau^2, t0 + tau^2)`` clipped to the grid."""
    center = grid.check_node(center)
    if tau < grid.h * (1 - _TOL):
        raise GridError(f"unresolvable radius tau={tau} < h={grid.h}")
    return GridIndexSet(grid, _cylinder_mask(grid, center, tau, closed=False, two_sided=True))


def parabolic_neighborhood(
    K: GridIndexSet, tau: float, grid: SpaceTimeGrid, one_sided: bool = False
) -> GridIndexSet:
    """Union of ``Q_tau`` (or ``Q^-_tau``) over the nodes of ``K``.

    Computed as a dilation of ``K`` by the cylinder's offset footprint.
    """
    if len(K) == 0:
        raise GridError("K is empty")
    if tau < grid.h * (1 - _TOL):
        raise GridError(f"unresolvable radius tau={tau} < h={grid.h}")
    tau2 = tau * tau
    eps = _TOL * tau2
    # offsets beyond the grid cannot reach any node
    ri = min(int(np.floor(tau / grid.h)), grid.nx - 1)
    kmax = min(int(np.floor(tau2 / grid.dt)), grid.nt - 1)
    out = np.zeros(grid.shape, dtype=bool)
    src = K.mask
    for dk in range(-kmax, kmax + 1):
        # node (k+dk) covered from centre k: centre time t0, node t = t0 + dk*dt
        tdiff = dk * grid.dt
        if one_sided:
            if not (-tau2 + eps < tdiff <= eps):
                continue
        elif not (abs(tdiff) < tau2 - eps):
            continue
        for off in itertools.product(range(-ri, ri + 1), repeat=grid.dim):
            if sum((o * grid.h) ** 2 for o in off) >= tau2 - eps:
                continue
            shift = (dk,) + off
            out |= _shifted(src, shift)
    return GridIndexSet(grid, out)


def _shifted(mask, shift):
    """mask shifted so that out[n + shift] = mask[n], zero-filled."""
    out = np.zeros_like(mask)
    if any(abs(s) >= n for s, n in zip(shift, mask.shape)):
        return out
    src_sl, dst_sl = [], []
    for s, n in zip(shift, mask.shape):
        if s >= 0:
            src_sl.append(slice(0, n - s))
            dst_sl.append(slice(s, n))
        else:
            src_sl.append(slice(-s, n))
            dst_sl.append(slice(0, n + s))
    out[tuple(dst_sl)] = mask[tuple(src_sl)]
    return out
