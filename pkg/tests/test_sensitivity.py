import numpy as np
import pytest

import hypergames.sensitivity as sens_mod
from hypergames.game import GameSpec, ThetaParams
from hypergames.hcw import OrbitConstants, planar_dynamics
from hypergames.scenarios import circle_scenario, guess_theta, table_scenario, truth_theta
from hypergames.sensitivity import (
    DIRECT,
    LEAST_SQUARES,
    NotConvergedError,
    loss_gradient,
    natural_scale,
    solution_sensitivity,
    trajectory_loss,
)
from hypergames.solver import solve_mcp


@pytest.fixture(scope="module")
def table():
    spec = table_scenario()
    th = truth_theta(spec)
    res = solve_mcp(spec, th)
    return spec, th, res, solution_sensitivity(spec, th, res)


def resolve_fd(spec, th, res, omega_step=0.0, rho_step=0.0):
    """Central difference of re-solved equilibria in natural units."""
    plus = ThetaParams.uniform(spec, th.omega[0] + omega_step, th.rho[0] + rho_step)
    minus = ThetaParams.uniform(spec, th.omega[0] - omega_step, th.rho[0] - rho_step)
    zp = solve_mcp(spec, plus, warm_start=res).z
    zm = solve_mcp(spec, minus, warm_start=res).z
    return (zp - zm) / (2 * (omega_step + rho_step))


def test_implicit_function_consistency(table):
    spec, th, res, s = table
    assert s.method == DIRECT
    assert s.consistency <= 1e-8
    assert np.all(np.isfinite(s.dz_dtheta))
    assert s.dz_dtheta.shape == (1247, 2)


@pytest.mark.parametrize("col, kw", [(0, {"omega_step": 1e-5}), (1, {"rho_step": 1e-5})])
def test_matches_resolve_differences(table, col, kw):
    spec, th, res, s = table
    fd = resolve_fd(spec, th, res, **kw)
    an = s.natural_units()[:, col]
    assert np.linalg.norm(fd - an) <= 1e-3 * np.linalg.norm(fd)


def test_natural_scale():
    spec = table_scenario()
    np.testing.assert_allclose(natural_scale(truth_theta(spec)), [1.0, 1.0 / 30.0])


def test_inactive_constraints_give_zero_columns():
    dyn = planar_dynamics(OrbitConstants())
    spec = GameSpec(dyn, [[0, 100, 0, 0], [0, -100, 0, 0]], [[0, 150], [0, -150]], 30, pairs=[(0, 1)])
    th = ThetaParams.uniform(spec, 0.001, 10.0)
    res = solve_mcp(spec, th)
    s = solution_sensitivity(spec, th, res)
    assert np.max(np.abs(s.dz_dtheta)) <= 1e-9
    from hypergames.game import Trajectory

    offset = Trajectory(res.trajectory.states + 3.0, res.trajectory.controls)
    assert np.max(np.abs(loss_gradient(res, s, offset))) <= 1e-6


def test_tied_columns_are_sums():
    spec = circle_scenario(3)
    untied = ThetaParams.uniform(spec, 0.015, 30.0)
    tied = ThetaParams.uniform(spec, 0.015, 30.0, tied=True)
    res = solve_mcp(spec, untied)
    s_u = solution_sensitivity(spec, untied, res).dz_dtheta
    s_t = solution_sensitivity(spec, tied, res).dz_dtheta
    np.testing.assert_allclose(s_t[:, 0], s_u[:, :3].sum(axis=1), atol=1e-9 * np.abs(s_u).max())
    np.testing.assert_allclose(s_t[:, 1], s_u[:, 3:].sum(axis=1), atol=1e-9 * np.abs(s_u).max())


def test_least_squares_fallback_agrees(table, monkeypatch):
    spec, th, res, s = table
    monkeypatch.setattr(sens_mod, "PIVOT_THRESHOLD", 1e300)
    s_ls = solution_sensitivity(spec, th, res)
    assert s_ls.method == LEAST_SQUARES
    np.testing.assert_allclose(s_ls.dz_dtheta, s.dz_dtheta, rtol=1e-6, atol=1e-8 * np.abs(s.dz_dtheta).max())


def test_requires_converged_point():
    spec = table_scenario()
    th = truth_theta(spec)
    res = solve_mcp(spec, th)
    with pytest.raises(NotConvergedError):
        solution_sensitivity(spec, th, res.z + 1.0)


def test_loss_gradient_zero_when_matching(table):
    spec, th, res, s = table
    np.testing.assert_array_equal(loss_gradient(res, s, res.trajectory), 0.0)
    assert trajectory_loss(res.trajectory, res.trajectory) == 0.0


def test_loss_gradient_end_to_end_fd():
    spec = table_scenario()
    expert = solve_mcp(spec, truth_theta(spec)).trajectory
    th = guess_theta(spec)
    res = solve_mcp(spec, th)
    g = loss_gradient(res, solution_sensitivity(spec, th, res), expert)
    vec = th.learnable_vector()
    for k, h in enumerate([1e-6, 1e-5]):
        step = np.zeros_like(vec)
        step[k] = h
        lp = trajectory_loss(solve_mcp(spec, th.with_learnable_vector(vec + step), warm_start=res).trajectory, expert)
        lm = trajectory_loss(solve_mcp(spec, th.with_learnable_vector(vec - step), warm_start=res).trajectory, expert)
        assert g[k] == pytest.approx((lp - lm) / (2 * h), rel=1e-2)


def test_gradient_vanishes_at_truth(table):
    spec, th, res, s = table
    expert = solve_mcp(spec, th).trajectory
    assert np.linalg.norm(loss_gradient(res, s, expert)) <= 1e-4


def test_positions_only_gradient_ignores_velocities(table):
    spec, th, res, s = table
    states = res.trajectory.states.copy()
    states[..., 2:] += 5.0
    from hypergames.game import Trajectory

    shifted = Trajectory(states, res.trajectory.controls)
    np.testing.assert_array_equal(loss_gradient(res, s, shifted, positions_only=True), 0.0)
    assert np.linalg.norm(loss_gradient(res, s, shifted)) > 0


def test_expert_shape_checked(table):
    spec, th, res, s = table
    from hypergames.game import Trajectory

    bad = Trajectory(np.zeros((10, 2, 4)), np.zeros((9, 2, 2)))
    with pytest.raises(ValueError):
        loss_gradient(res, s, bad)
