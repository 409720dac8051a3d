import io
from dataclasses import replace

import numpy as np
import pytest

from fnfront.config import demo_config
from fnfront.expressions import Expression
from fnfront.geometry import SpaceTimeGrid
from fnfront.operators import OperatorSpec, discrete_operator_apply
from fnfront.problem import DirichletSpec, ForcingSpec, ProblemSpec, ReactionProfile, default_bump
from fnfront.solver import (
    ShiftState,
    SolutionField,
    SolverError,
    SolverOptions,
    choose_mu,
    monotone_iteration,
    shifted_step_solve,
    solve_epsilon_problem,
)
from helpers import make_problem
from oracles import heat_exact

TRACE1 = OperatorSpec(1.0, 1.0, "linear_trace", matrix=[[1.0]])


def _problem(grid, op=TRACE1, f=0.0, phi="0", reaction=None):
    forcing = ForcingSpec(Expression(repr(float(f)), ("x", "y", "t", "eps")), f, f, 0.0)
    return ProblemSpec(grid, op, reaction or ReactionProfile.zero(), forcing,
                       DirichletSpec(Expression(phi, ("x", "y", "t"))))


def test_single_node_closed_form():
    g = SpaceTimeGrid(1, 3, 2, 0.1)
    pb = _problem(g, f=2.0, phi="1 + x")
    opts = SolverOptions(one_phase=False)
    prev = np.array([0.0, 0.3, 0.0])
    start = np.array([1.0, 0.0, 2.0])
    state = ShiftState(1.0, 0.1, ReactionProfile.zero())
    w, info = shifted_step_solve(pb, 0.1, state, prev, start, 1, opts)
    h2, dt = g.h**2, g.dt
    # (1 + 2 - 2w)/h^2 - 2 - (w - 0.3)/dt = 0
    exact = (3 / h2 - 2 + 0.3 / dt) / (2 / h2 + 1 / dt)
    assert w[1] == pytest.approx(exact, abs=1e-9)
    assert w[0] == 1.0 and w[2] == 2.0
    assert info["residual"] <= opts.inner_tol


def test_zero_reaction_independent_of_mu():
    pb = make_problem(problem={"reaction": {"amplitude": 0.0}})
    g = pb.grid
    prev = pb.dirichlet_at(3)
    start = pb.dirichlet_at(4)
    out = []
    for mu in (1.0, 10.0):
        state = ShiftState(mu, 0.1, pb.reaction)
        w, info = shifted_step_solve(pb, 0.1, state, prev, start, 4)
        assert info["residual"] <= 1e-10
        out.append(w)
    assert np.array_equal(out[0], out[1])
    assert g.nx == len(out[0])


def test_inner_iteration_cap_raises_with_trace():
    pb = make_problem()
    state = ShiftState(choose_mu(pb.reaction, 0.1, pb.grid.dt), 0.1, pb.reaction)
    start = pb.dirichlet_at(1)
    start[1:-1] = 5.0
    with pytest.raises(SolverError) as ei:
        shifted_step_solve(pb, 0.1, state, pb.dirichlet_at(0), start, 1,
                           SolverOptions(max_inner=3))
    assert ei.value.level == 1
    assert len(ei.value.trace) == 1 and ei.value.trace[0] > 1e-10


def test_zero_reaction_one_outer_iteration():
    pb = make_problem(problem={"reaction": {"amplitude": 0.0}})
    u, info = monotone_iteration(pb, 0.1, 1, pb.dirichlet_at(0))
    assert info["outer"] == 1


def test_monotone_iterates_nondecreasing():
    pb = make_problem()
    opts = SolverOptions(l_guess=1.0)
    fld = solve_epsilon_problem(pb, 0.1, opts, keep_iterates=True)
    worst = 0.0
    for its in fld.diagnostics["iterates"].values():
        for a, b in zip(its[1:], its[2:]):
            worst = max(worst, float(np.max(a - b)))
    assert worst <= 10 * opts.outer_tol
    assert fld.diagnostics["max_monotonicity_defect"] <= 10 * opts.outer_tol
    assert fld.diagnostics["max_outer"] > 1


def test_start_iterate_does_not_change_fixed_point():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    k = 40
    prev = fld.values[k - 1]
    a, _ = monotone_iteration(pb, 0.1, k, prev)
    b, _ = monotone_iteration(pb, 0.1, k, prev, start=np.zeros_like(prev))
    assert np.max(np.abs(a - b)) <= 10 * 1e-8
    assert np.max(np.abs(a - fld.values[k])) <= 10 * 1e-8


def test_outer_iteration_cap_raises():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    k = 40
    with pytest.raises(SolverError):
        monotone_iteration(pb, 0.1, k, fld.values[k - 1], start=np.zeros(pb.grid.nx),
                           options=SolverOptions(max_outer=1))


def _heat_error(nx, T=1 / 16):
    h = 1 / (nx - 1)
    g = SpaceTimeGrid(1, nx, int(round(T / h**2)) + 1, T)
    pb = _problem(g)
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(one_phase=False, resolution_guard=False),
                                initial=np.sin(np.pi * g.x))
    exact = heat_exact(g.x[None, :], g.t[:, None])
    return float(np.max(np.abs(fld.values - exact))), g


def test_heat_oracle_error_bound():
    err, g = _heat_error(17)
    assert err <= 2.0 * (g.h**2 + g.dt)


def test_heat_convergence_order():
    e1, _ = _heat_error(17)
    e2, _ = _heat_error(33)
    assert 3.2 <= e1 / e2 <= 4.8


def test_positive_forcing_zero_data_gives_nonpositive_solution():
    g = SpaceTimeGrid(1, 17, 33, 32 / 256)
    pb = _problem(g, op=OperatorSpec(1, 2, "pucci_minus"), f=1.0)
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(one_phase=False, resolution_guard=False),
                                check_assumptions=False)
    assert fld.sup <= 1e-8
    assert fld.inf < -1e-3
    # the one-phase projection keeps the same problem at zero
    fld1 = solve_epsilon_problem(pb, 0.1, SolverOptions(resolution_guard=False),
                                 check_assumptions=False)
    assert np.all(fld1.values == 0.0)


@pytest.mark.parametrize("one_phase", [False, True])
def test_comparison_in_forcing(one_phase):
    opts = SolverOptions(one_phase=one_phase, resolution_guard=False)
    big = make_problem(problem={"reaction": {"amplitude": 0.0},
                                "forcing": {"expr": "3 - x", "c0": 2.0, "c1": 3.0,
                                            "grad_bound": 1.0}})
    small = make_problem(problem={"reaction": {"amplitude": 0.0},
                                  "forcing": {"expr": "1", "c0": 1.0, "c1": 1.0}})
    u1 = solve_epsilon_problem(big, 0.1, opts).values
    u2 = solve_epsilon_problem(small, 0.1, opts).values
    assert np.all(u1 <= u2 + 10 * opts.outer_tol)
    assert np.max(u2 - u1) > 1e-3


def test_solution_matches_boundary_data_exactly():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    for k in range(pb.grid.nt):
        bc = pb.dirichlet_at(k)
        assert fld.values[k, 0] == bc[0] and fld.values[k, -1] == bc[-1]
    assert np.array_equal(fld.values[0], pb.dirichlet_at(0))
    assert fld.inf >= -1e-8


def test_per_level_diagnostics():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    levels = fld.diagnostics["levels"]
    assert len(levels) == pb.grid.nt - 1
    assert {"outer", "residual", "monotonicity_defect"} <= set(levels[0])
    assert max(lv["residual"] for lv in levels) <= 1e-10


def test_resolution_warning_flag():
    pb = make_problem()
    flagged = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    clear = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=0.1))
    assert flagged.diagnostics["resolution_warning"] is True
    assert clear.diagnostics["resolution_warning"] is False


def test_choose_mu_floor_for_zero_reaction():
    assert choose_mu(ReactionProfile.zero(), 0.1, dt=1e-3) == pytest.approx(1e3)


def test_choose_mu_scaling():
    p = ReactionProfile()
    a, b = choose_mu(p, 0.1), choose_mu(p, 0.05)
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_choose_mu_default_value():
    s = np.linspace(1e-6, 1 - 1e-6, 2_000_001)
    slope = np.max(np.abs(np.gradient(default_bump(s), s)))
    assert choose_mu(ReactionProfile(), 0.1) == pytest.approx(2.1 * slope * 100, rel=1e-6)


def test_shift_state_rejects_small_mu():
    with pytest.raises(SolverError):
        ShiftState(1.0, 0.1, ReactionProfile())


def test_csv_round_trip():
    pb = make_problem()
    fld = solve_epsilon_problem(pb, 0.1, SolverOptions(l_guess=1.0))
    text = fld.to_csv_string()
    back = SolutionField.from_csv(io.StringIO(text), pb.grid)
    assert np.array_equal(back.values, fld.values)
    inferred = SolutionField.from_csv(io.StringIO(text))
    assert inferred.grid.nx == pb.grid.nx and inferred.grid.nt == pb.grid.nt
    assert text.splitlines()[0] == "x,t,u"


def test_demo_solution_bounds():
    cfg = demo_config()
    fld = solve_epsilon_problem(cfg.problem, 0.05, cfg.solver)
    g = cfg.problem.grid
    phi_sup = max(float(np.max(np.abs(cfg.problem.dirichlet_at(k)))) for k in range(g.nt))
    assert fld.inf >= 0.0
    assert fld.sup <= phi_sup + 1


def _barrier(grid, L, M0, Lam, sign, t0, u0=0.3):
    X = grid.x[None, :] - 0.5
    T = grid.t[:, None]
    return u0 + sign * (L + 2 * L / Lam * X**2 + (4 * L + M0) * (T - t0))


@pytest.mark.parametrize("form", ["pucci_minus", "pucci_plus"])
def test_quadratic_barriers_are_super_and_sub(form):
    g = SpaceTimeGrid(1, 33, 65, 64 / 1024)
    lam, Lam, L, M0 = 0.5, 2.0, 1.5, 0.7
    spec = OperatorSpec(lam, Lam, form)
    hp = _barrier(g, L, M0, Lam, +1, g.t[32])
    hm = _barrier(g, L, M0, Lam, -1, g.t[32])
    for node in [(10, 5), (32, 16), (60, 30)]:
        # apply returns F(D^2 w) - time difference
        assert -discrete_operator_apply(spec, hp, g, node) >= M0 - 1e-8
        assert -discrete_operator_apply(spec, hm, g, node) <= -M0 + 1e-8


def test_failed_assumptions_block_solve_unless_skipped():
    pb = make_problem(problem={"dirichlet": {"expr": "0.1 + t"}})
    with pytest.raises(SolverError):
        solve_epsilon_problem(pb, 0.1)
    opts = replace(SolverOptions(), resolution_guard=False)
    solve_epsilon_problem(pb, 0.1, opts, check_assumptions=False)
