import numpy as np
import pytest

from fnfront.geometry import GridError, GridIndexSet, SpaceTimeGrid
from fnfront.regularity import (
    compact_set,
    default_margin,
    epsilon_sweep,
    hoelder_time_seminorm,
    lip_space_seminorm,
    pde_residual,
    time_monotonicity_defect,
)
from fnfront.solver import SolutionField, SolverOptions, solve_epsilon_problem
from helpers import make_config, make_problem
from oracles import heat_exact


def _field(fn, nx=33, nt=129, T=128 / 1024, dim=1):
    g = SpaceTimeGrid(dim, nx, nt, T)
    if dim == 1:
        vals = fn(g.x[None, :], g.t[:, None])
    else:
        X, Y = g.coords()
        vals = fn(X[None], Y[None], g.t[:, None, None])
    return SolutionField(g, np.broadcast_to(vals, g.shape).astype(float))


def test_compact_set_margin():
    g = SpaceTimeGrid(1, 33, 129, 128 / 1024)
    K = compact_set(g)
    m = default_margin(g)
    assert m == pytest.approx(0.125)
    ks, xs = np.nonzero(K.mask)
    assert g.x[xs].min() >= m - 1e-12 and g.x[xs].max() <= 1 - m + 1e-12
    assert g.t[ks].min() >= m * m - 1e-12


def test_lip_constant_field():
    f = _field(lambda x, t: 0 * x + 2.5)
    assert lip_space_seminorm(f, compact_set(f.grid)) == 0.0


def test_lip_linear_field():
    f = _field(lambda x, t: 3 * x + 0 * t)
    assert lip_space_seminorm(f, compact_set(f.grid)) == pytest.approx(3.0, abs=1e-12)


def test_lip_linear_field_2d():
    f = _field(lambda x, y, t: 3 * x - 4 * y + 0 * t, nx=17, nt=33, T=32 / 256, dim=2)
    # pair directions are limited to |offset| <= 4h, so (3, -4) itself is not sampled
    L = lip_space_seminorm(f, compact_set(f.grid))
    assert 0.99 * 5.0 <= L <= 5.0 + 1e-12


def test_lip_heat_field_below_pi():
    f = _field(heat_exact)
    g = f.grid
    K = GridIndexSet(g, np.broadcast_to(g.x > 0, g.shape) & np.broadcast_to(g.x < 1, g.shape))
    L = lip_space_seminorm(f, K)
    assert L <= np.pi * 1.05
    assert L >= np.pi * 0.95


def test_lip_rejects_empty_and_boundary_touching_sets():
    f = _field(heat_exact)
    with pytest.raises(GridError):
        lip_space_seminorm(f, GridIndexSet.empty(f.grid))
    with pytest.raises(GridError):
        lip_space_seminorm(f, GridIndexSet.full(f.grid))


def test_hoelder_constant_field():
    f = _field(lambda x, t: 0 * x + 1.0)
    C, expo, rows = hoelder_time_seminorm(f, compact_set(f.grid))
    assert C == 0.0 and expo is None
    assert len(rows) >= 3


def test_hoelder_linear_in_time():
    f = _field(lambda x, t: t + 0 * x)
    C, expo, _ = hoelder_time_seminorm(f, compact_set(f.grid))
    assert expo == pytest.approx(1.0, abs=1e-9)
    assert np.isfinite(C)


def test_hoelder_heat_exponent():
    # short horizon: over long steps the exponential decay bends the log-log fit
    f = _field(heat_exact, nt=65, T=64 / 1024)
    _, expo, _ = hoelder_time_seminorm(f, compact_set(f.grid))
    assert expo >= 0.95


def test_hoelder_needs_enough_levels():
    f = _field(heat_exact)
    g = f.grid
    mask = np.zeros(g.shape, dtype=bool)
    mask[60:66, 10:20] = True
    with pytest.raises(GridError, match="8 time levels"):
        hoelder_time_seminorm(f, GridIndexSet(g, mask))
    mask[60:70:4, 10:20] = True
    mask[60:66] = False
    mask[60, 10:20] = True
    mask[68, 10:20] = True
    with pytest.raises(GridError, match="dyadic"):
        hoelder_time_seminorm(f, GridIndexSet(g, mask))


def test_time_monotonicity_defect():
    up = _field(lambda x, t: t * x)
    assert time_monotonicity_defect(up) == 0.0
    down = _field(lambda x, t: -t + 0 * x)
    assert time_monotonicity_defect(down) == pytest.approx(down.grid.dt)


def test_pde_residual_of_exact_discrete_solution():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    region = fld.values > 0.2
    region[:, [0, -1]] = False
    assert region.sum() > 0
    # away from the reaction layer the scheme equation holds with beta = 0, up to
    # the lagged shift mu * outer_tol and the inner tolerance scaled by the diagonal
    assert pde_residual(fld, pb, region) <= 1e-4


def test_zero_reaction_sweep_is_eps_independent():
    cfg = make_config(problem={"reaction": {"amplitude": 0.0}})
    rep, limit, fields = epsilon_sweep(cfg.problem, [0.2, 0.1, 0.05], cfg.solver)
    assert [c["sup_diff"] for c in rep.cauchy] == [0.0, 0.0]
    assert all(np.array_equal(fields[0].values, f.values) for f in fields)
    assert limit.eps == 0.05


def test_sweep_rejects_unsorted_eps():
    cfg = make_config()
    with pytest.raises(ValueError):
        epsilon_sweep(cfg.problem, [0.1, 0.2], cfg.solver)
    with pytest.raises(ValueError):
        epsilon_sweep(cfg.problem, [0.1, 0.1], cfg.solver)


def test_sweep_report_contents_and_thread_determinism():
    cfg = make_config()
    rep1, lim1, _ = epsilon_sweep(cfg.problem, [0.2, 0.1], cfg.solver, workers=1)
    rep2, lim2, _ = epsilon_sweep(cfg.problem, [0.2, 0.1], cfg.solver, workers=2)
    assert rep1.to_dict() == rep2.to_dict()
    assert np.array_equal(lim1.values, lim2.values)
    d = rep1.to_dict()
    assert d["compact_set"]["margin"] == pytest.approx(default_margin(cfg.problem.grid))
    for row in d["per_eps"]:
        assert row["lip_space"] >= 0 and row["hoelder_time"]["C_hat"] >= 0
        assert row["time_monotonicity_defect"] >= 0
    assert d["upsilon_hat"] == max(r["sup_norm"] for r in d["per_eps"])
    assert len(d["cauchy_residuals"]) == 1
    assert d["limit"]["pde_residual_threshold"] == pytest.approx(0.2)
    assert d["limit"]["pde_residual_above_max_eps_threshold"] == pytest.approx(0.4)
