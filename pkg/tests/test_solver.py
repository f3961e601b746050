import numpy as np
import pytest

from hypergames.game import GameSpec, InfeasibleGeometryError, ThetaParams, feasibility_report, rollout
from hypergames.hcw import LinearDynamics, OrbitConstants, hcw_input_matrix, hcw_transition, planar_dynamics, reduce_to_planar
from hypergames.kkt import KKTSystem, index_map
from hypergames.scenarios import table_scenario, truth_theta
from hypergames.solver import (
    CONVERGED,
    SolveOptions,
    best_response_check,
    certificate,
    initial_guess,
    semismooth_newton,
    solve_linear_qp,
    solve_mcp,
)


def equality_qp_oracle(A, B, x1, goal, xi, T):
    """Dense KKT solve of min |p_T - goal|^2 + xi sum |u|^2 s.t. x_{t+1} = A x_t + B u_t.

    Written without any of the package's assembly code.
    """
    nx, nu = B.shape
    S = T - 1
    n = S * nx + S * nu
    H = np.zeros((n, n))
    c = np.zeros(n)
    npos = nx // 2
    last = (S - 1) * nx
    for k in range(npos):
        H[last + k, last + k] = 2.0
        c[last + k] = -2.0 * goal[k]
    H[S * nx :, S * nx :] = 2.0 * xi * np.eye(S * nu)
    E = np.zeros((S * nx, n))
    e = np.zeros(S * nx)
    for t in range(S):
        E[t * nx : (t + 1) * nx, t * nx : (t + 1) * nx] = np.eye(nx)
        E[t * nx : (t + 1) * nx, S * nx + t * nu : S * nx + (t + 1) * nu] = -B
        if t == 0:
            e[:nx] = A @ x1
        else:
            E[t * nx : (t + 1) * nx, (t - 1) * nx : t * nx] = -A
    K = np.block([[H, E.T], [E, np.zeros((S * nx, S * nx))]])
    sol = np.linalg.solve(K, np.concatenate([-c, e]))
    y = sol[:n]
    return y[: S * nx].reshape(S, nx), y[S * nx :].reshape(S, nu)


@pytest.fixture(scope="module")
def table():
    spec = table_scenario()
    th = truth_theta(spec)
    return spec, th, solve_mcp(spec, th)


def test_single_robot_matches_oracle_near_zero_rate():
    full = LinearDynamics(hcw_transition(1e-9, 5.0), hcw_input_matrix(1e-9, 5.0, 100.0))
    dyn = reduce_to_planar(full)
    spec = GameSpec(dyn, [[0.0, 0.0, 0.0, 0.0]], [[12.0, -7.0]], 20)
    th = ThetaParams(np.zeros(0), np.zeros(0), [1e-3])
    res = solve_mcp(spec, th)
    assert res.converged
    xs, us = equality_qp_oracle(dyn.A, dyn.B, spec.initial_state[0], spec.goals[0], 1e-3, spec.horizon)
    assert np.max(np.abs(us)) < 1.0  # thrust box inactive, so the oracle applies
    np.testing.assert_allclose(res.trajectory.states[1:, 0], xs, atol=1e-6)


def test_uncoupled_game_matches_per_robot_oracle():
    dyn = planar_dynamics(OrbitConstants())
    x1 = [[0.0, 20.0, 0.0, 0.0], [-15.0, 0.0, 0.01, 0.0], [5.0, 5.0, 0.0, -0.02]]
    goals = [[0.0, -10.0], [10.0, 3.0], [-5.0, 0.0]]
    spec = GameSpec(dyn, x1, goals, 30)
    xi = [1e-4, 1e-3, 5e-3]
    res = solve_mcp(spec, ThetaParams(np.zeros(0), np.zeros(0), xi))
    assert res.converged
    for i in range(3):
        xs, us = equality_qp_oracle(dyn.A, dyn.B, spec.initial_state[i], spec.goals[i], xi[i], 30)
        assert np.max(np.abs(us)) < 1.0
        np.testing.assert_allclose(res.trajectory.states[1:, i], xs, atol=1e-6)


def test_table_converges_collision_free(table):
    spec, th, res = table
    assert res.status == CONVERGED
    assert res.final_residual <= 1e-6
    rep = feasibility_report(spec, th, res.trajectory)
    assert rep.is_feasible()
    assert rep.min_distance >= 30.0 - 1e-3
    cert = certificate(spec, th, res)
    assert cert["min_hyperplane"] >= -1e-6 and cert["min_multiplier"] >= -1e-6
    assert cert["max_product"] <= 1e-6


def test_constraint_is_active_at_truth(table):
    spec, th, res = table
    # the keep-out constraint shapes the equilibrium: some multiplier is clearly positive
    assert res.solution.v.max() > 1.0


def test_infeasible_geometry_raises_before_iterating():
    spec = table_scenario()
    with pytest.raises(InfeasibleGeometryError):
        solve_mcp(spec, ThetaParams.uniform(spec, 0.015, 200.0))


def test_initial_guess_interpolates():
    spec = table_scenario()
    lay = index_map(spec)
    sol = lay.unpack(initial_guess(spec))
    traj = sol.trajectory(spec)
    np.testing.assert_allclose(traj.states[-1, 0, :2], [0.0, -100.0])
    np.testing.assert_allclose(traj.states[21, 0, :2], [0.0, 100.0 - 200.0 * 21 / 43])
    assert np.all(sol.w == 0) and np.all(sol.v == 1e-2) and np.all(sol.lam_hi == 1e-2)
    assert np.max(np.abs(sol.u)) <= spec.thrust_limit


def test_initial_guess_at_goal_is_still():
    dyn = planar_dynamics(OrbitConstants())
    spec = GameSpec(dyn, [[0.0, 5.0, 0.0, 0.0]], [[0.0, 5.0]], 10)
    sol = index_map(spec).unpack(initial_guess(spec))
    np.testing.assert_allclose(sol.x[..., :2], 5.0 * np.array([0.0, 1.0]) + np.zeros((9, 1, 2)))
    assert np.max(np.abs(sol.u)) < 1e-6


def test_deterministic_and_monotone(table):
    spec, th, res = table
    again = solve_mcp(spec, th)
    assert np.array_equal(again.z, res.z)
    assert again.history == res.history
    assert np.all(np.diff(res.merits) < 0)


def test_warm_start_from_solution_is_immediate(table):
    spec, th, res = table
    again = solve_mcp(spec, th, warm_start=res)
    assert again.converged and again.iterations == 0
    with pytest.raises(ValueError):
        solve_mcp(spec, th, warm_start=np.zeros(3))


def test_best_response_certificate(table):
    spec, th, res = table
    for i in range(2):
        br = best_response_check(spec, th, res, i)
        assert br.conclusive
        assert br.improvement <= 1e-4 * (1 + abs(br.equilibrium_cost))


def test_best_response_detects_perturbation(table):
    spec, th, res = table
    sol = res.solution
    u = sol.u.copy()
    u[:, 0] *= 0.9
    traj = rollout(spec, u)
    sol.u[...] = u
    sol.x[...] = traj.states[1:]
    z_bad = res.layout.pack(sol)
    br = best_response_check(spec, th, z_bad, 0)
    assert br.conclusive
    assert br.improvement > 1e-3 * (1 + abs(br.best_cost))


def test_single_robot_best_response_is_zero():
    dyn = planar_dynamics(OrbitConstants())
    spec = GameSpec(dyn, [[0.0, 0.0, 0.0, 0.0]], [[30.0, 0.0]], 15)
    th = ThetaParams(np.zeros(0), np.zeros(0), [1e-4])
    res = solve_mcp(spec, th)
    br = best_response_check(spec, th, res, 0)
    assert abs(br.improvement) <= 1e-8 * (1 + abs(br.equilibrium_cost))


def test_linear_qp_box():
    # min 0.5 |y - (3, -3)|^2 with -1 <= y <= 1 and y0 + y1 = 0
    Q = np.eye(2)
    q = -np.array([3.0, -3.0])
    E = np.array([[1.0, 1.0]])
    C = np.vstack([np.eye(2), -np.eye(2)])
    d = -np.ones(4)
    out = solve_linear_qp(Q, q, E, [0.0], C, d)
    assert out.converged
    np.testing.assert_allclose(out.z[:2], [1.0, -1.0], atol=1e-9)


def test_newton_on_smooth_system():
    import scipy.sparse as sp

    fun = lambda z: np.array([z[0] ** 2 - 4.0, z[1] - z[0]])  # noqa: E731
    jac = lambda z, s: sp.csc_matrix([[2 * z[0], 0.0], [-1.0, 1.0]])  # noqa: E731
    out = semismooth_newton(fun, jac, [1.0, 0.0])
    assert out.converged
    np.testing.assert_allclose(out.z, [2.0, 2.0])


def test_budget_exhaustion_returns_best_iterate():
    spec = table_scenario()
    th = truth_theta(spec)
    res = solve_mcp(spec, th, SolveOptions(max_iterations=3))
    assert res.status == "max_iterations"
    assert res.final_residual == min(h[1] for h in res.history)
    assert np.max(np.abs(KKTSystem(spec, th).residual(res.z))) == pytest.approx(res.final_residual)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(max_iterations=0)
    with pytest.raises(ValueError):
        SolveOptions(residual_tol=-1.0)
    with pytest.raises(ValueError):
        SolveOptions(backtrack=1.5)


def test_iteration_log(tmp_path, table):
    spec, th, res = table
    res.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "iteration,residual,step"
    assert len(lines) == res.iterations + 2


def test_saturated_game_uses_smoothing_fallback():
    # short horizon and long moves: most thrust bounds are active at the solution
    dyn = planar_dynamics(OrbitConstants())
    x1 = [[0.0, 100.0, 0.0, 0.0], [-100.0, 0.0, 0.0, 0.0], [30.0, -40.0, 0.02, 0.0]]
    goals = [[0.0, -100.0], [100.0, 0.0], [-20.0, 10.0]]
    spec = GameSpec(dyn, x1, goals, 20)
    th = ThetaParams(np.zeros(0), np.zeros(0), [1e-4, 1e-3, 1e-2])
    res = solve_mcp(spec, th)
    assert res.converged and res.attempts == 2 and res.smoothing == 1e-2
    rep = feasibility_report(spec, th, res.trajectory)
    assert rep.max_thrust <= 1.0 + 1e-8
    assert not solve_mcp(spec, th, SolveOptions(smoothing_fallbacks=())).converged
