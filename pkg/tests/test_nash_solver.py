import numpy as np
import pytest

from decnash.dynamics import VehicleParams, VehicleState
from decnash.game import GameSpec, build_game, constraint_residuals, objective, rollout
from decnash.nash_solver import (
    SolverConfig,
    SpecError,
    check_equilibrium,
    solve,
    stationarity_jacobian,
    stationarity_residual,
)
from decnash.paths import straight_path

from .conftest import crossing_states, random_game
from .oracles import central_difference, grid_min


def single(v0=5.0, v_target=5.0, T=1, q=1.0, r=1.0, u_min=-5.0, u_max=3.0, s0=0.0):
    path = straight_path((0.0, 0.0), (500.0, 0.0))
    p = VehicleParams("a", path, v_target=v_target, q=q, r=r, u_min=u_min, u_max=u_max)
    return build_game(["a"], [], {"a": VehicleState.on_path("a", path, s0, v0)}, {"a": p}, horizon_steps=T)


def qp_oracle(spec):
    """Unconstrained single-player optimum from the normal equations."""
    T, dt = spec.horizon_steps, spec.dt
    p = spec.controlled[0][1]
    v0 = spec.controlled[0][0].v
    Lv = np.tril(np.full((T, T), dt))
    A = p.q * Lv.T @ Lv + p.r * np.eye(T)
    return np.linalg.solve(A, p.q * Lv.T @ np.full(T, p.v_target - v0))


def crossing_game(gap_a=6.0, gap_b=6.0):
    states, params = crossing_states(gap_a, gap_b)
    return build_game(["a", "b"], [], states, params, horizon_steps=20, dt=0.2, r_safe=3.0)


def test_single_step_at_target():
    sol = solve(single())
    assert sol.converged
    assert abs(sol.plan.controls[0, 0]) < 1e-6


def test_single_player_matches_normal_equations():
    g = single(v0=3.0, v_target=6.0, T=8)
    sol = solve(g)
    assert sol.converged
    assert np.allclose(sol.plan.controls[0], qp_oracle(g), atol=1e-6)


def test_single_player_grid_oracle():
    g = single(v0=0.0, v_target=7.0, T=5, r=0.2)

    def cost(u):
        return objective(rollout(g, u[None]), g, 0)

    best, _ = grid_min(cost, [-3] * 5, [3] * 5, 7)
    sol = solve(g)
    assert sol.converged
    assert np.all(sol.plan.controls <= 3.0 + 1e-6)
    # the grid contains the bound-saturated optimum's neighbourhood; the
    # continuous solve can only be better
    assert objective(sol.plan, g, 0) <= best + 1e-9


def test_bounds_active():
    g = single(v0=0.0, v_target=30.0, T=4, r=1e-3)
    sol = solve(g)
    assert sol.converged
    assert np.allclose(sol.plan.controls, 3.0, atol=1e-5)
    assert sol.max_violation <= 1e-6
    # bound multipliers close the stacked residual exactly
    assert sol.stationarity_norm <= 1e-6
    upper = sol.multipliers[:4]
    assert np.all(upper > 0)


def test_lower_bound_active_from_speed():
    g = single(v0=20.0, v_target=1.0, T=3, r=1e-3, u_min=-2.0)
    sol = solve(g, SolverConfig(record_trace=True))
    assert sol.converged
    assert np.allclose(sol.plan.controls, -2.0)
    assert np.all(sol.multipliers[3:6] > 0) and np.all(sol.multipliers[:3] == 0)
    assert sol.stationarity_norm <= 1e-6


def test_decoupled_players_match_independent_solves():
    path_a = straight_path((0.0, 0.0), (300.0, 0.0))
    path_b = straight_path((0.0, 200.0), (300.0, 200.0))
    params = {
        "a": VehicleParams("a", path_a, v_target=9.0, q=2.0, r=0.5),
        "b": VehicleParams("b", path_b, v_target=4.0, q=1.0, r=1.5),
    }
    states = {"a": VehicleState.on_path("a", path_a, 0.0, 5.0), "b": VehicleState.on_path("b", path_b, 0.0, 7.0)}
    joint = solve(build_game(["a", "b"], [], states, params))
    sa = solve(build_game(["a"], [], states, params))
    sb = solve(build_game(["b"], [], states, params))
    assert joint.converged and sa.converged and sb.converged
    assert np.abs(joint.plan.controls[0] - sa.plan.controls[0]).max() <= 1e-6
    assert np.abs(joint.plan.controls[1] - sb.plan.controls[0]).max() <= 1e-6


def test_crossing_converges_to_equilibrium():
    g = crossing_game()
    sol = solve(g)
    assert sol.converged
    assert sol.stationarity_norm <= 1e-6 and sol.max_violation <= 1e-6
    assert sol.complementarity <= 1e-6
    assert np.all(sol.multipliers >= 0)
    _, ineq = constraint_residuals(sol.plan, g)
    assert ineq.max() <= 1e-6
    rep = check_equilibrium(sol.plan, g, n_probes=100, radius=1e-3)
    assert rep.max_improvement <= 1e-5


def test_equilibrium_probe_sanity():
    g = crossing_game()
    sol = solve(g)
    assert check_equilibrium(sol.plan, g, radius=0.0).max_improvement == 0.0
    # both brake hard for no reason: either can improve alone
    bad = rollout(g, np.full((2, 20), -2.0))
    assert check_equilibrium(bad, g, radius=0.1).max_improvement > 1e-3


def test_warm_start_at_solution():
    g = single(v0=3.0, v_target=6.0, T=8)
    sol = solve(g)
    again = solve(g, warm_start=sol.plan)
    assert again.converged and again.inner_iters <= 2
    c = crossing_game()
    sol = solve(c)
    again = solve(c, warm_start=sol.plan, warm_multipliers=sol.multipliers)
    assert again.converged and again.inner_iters <= 2


def test_warm_start_shape_checked():
    g = single(T=4)
    with pytest.raises(SpecError):
        solve(g, warm_start=np.zeros((1, 3)))
    with pytest.raises(SpecError):
        solve(g, warm_multipliers=np.zeros(2))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rho_scale=1.0)
    with pytest.raises(ValueError):
        SolverConfig(max_outer=0)
    with pytest.raises(ValueError):
        SolverConfig(ls_shrink=1.5)


def test_deterministic():
    g = crossing_game(5.0, 7.0)
    a = solve(g, SolverConfig(record_trace=True))
    b = solve(g, SolverConfig(record_trace=True))
    assert np.array_equal(a.plan.controls, b.plan.controls)
    assert a.trace == b.trace
    inner = [r for r in a.trace if r["inner"] > 0]
    outer = [r for r in a.trace if r["inner"] == 0]
    assert inner and all({"outer", "residual", "violation", "step"} <= set(r) for r in inner)
    assert len(outer) == a.outer_iters and all("rho" in r for r in outer)


def test_max_players_refused():
    g = crossing_game()
    sol = solve(g, SolverConfig(max_players=1))
    assert not sol.converged and sol.inner_iters == 0


@pytest.mark.parametrize("seed", range(8))
def test_residual_jacobian_matches_fd(seed):
    rng = np.random.default_rng(100 + seed)
    g = random_game(rng, 2, 0, T=3)
    z = g.pack(rollout(g, rng.normal(0, 1, (2, 3)))) + rng.normal(0, 0.05, g.n_vars)
    mu = rng.normal(0, 1, 2 * 3 * 2)
    lam = rng.uniform(0, 2, g.n_ineq)
    rho = 3.0

    def f(x):
        return stationarity_residual(g, x[: g.n_vars], x[g.n_vars :], lam, rho)

    x = np.concatenate([z, mu])
    J = stationarity_jacobian(g, z, mu, lam, rho)
    fd = central_difference(f, x, h=1e-7)
    # the max(0, .) kink makes FD meaningless for rows sitting on it
    from decnash.game import evaluate_constraints

    ineq = evaluate_constraints(g, z).ineq
    if np.any(np.abs(lam + rho * ineq) < 1e-4):
        pytest.skip("point on a penalty kink")
    assert np.abs(J - fd).max() <= 1e-4 * max(1.0, np.abs(fd).max())


REGRESSION = [(6.0, 6.0), (5.0, 7.0), (7.5, 4.0), (3.0, 9.0), (8.0, 8.0)]


@pytest.mark.parametrize("gaps", REGRESSION)
def test_regression_suite(gaps):
    g = crossing_game(*gaps)
    sol = solve(g)
    assert sol.converged
    assert check_equilibrium(sol.plan, g).max_improvement <= 1e-5


@pytest.mark.parametrize("gaps", REGRESSION)
def test_outer_violation_monotone(gaps):
    sol = solve(crossing_game(*gaps))
    hist = sol.violation_history
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:])), hist
