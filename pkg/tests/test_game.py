import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypergames.game import (
    DegenerateGeometryError,
    GameSpec,
    InfeasibleGeometryError,
    ThetaParams,
    Trajectory,
    all_pairs,
    alpha_from_initial_state,
    check_initial_separation,
    feasibility_report,
    hyperplane_geometry,
    hyperplane_normals,
    hyperplane_value,
    hyperplane_values,
    min_pairwise_distance,
    objective_value,
    rollout,
)
from hypergames.scenarios import circle_scenario, table_scenario, truth_theta


@pytest.fixture(scope="module")
def spec():
    return table_scenario()


def test_alpha_table():
    x1 = np.array([[0, 100, 0, 0], [-100, 0, 0, 0]], float)
    assert alpha_from_initial_state(x1, (0, 1)) == pytest.approx(math.pi / 4)


@pytest.mark.parametrize("p_j, expected", [((-5.0, 0.0), 0.0), ((0.0, -5.0), math.pi / 2)])
def test_alpha_axes(p_j, expected):
    x1 = np.array([[0, 0, 0, 0], [*p_j, 0, 0]], float)
    assert alpha_from_initial_state(x1, (0, 1)) == pytest.approx(expected)


def test_alpha_degenerate():
    x1 = np.zeros((2, 4))
    with pytest.raises(DegenerateGeometryError):
        alpha_from_initial_state(x1, (0, 1))


def test_table_spec_shape(spec):
    assert spec.horizon == 44
    assert spec.num_robots == 2 and spec.pairs == ((0, 1),)
    assert spec.spatial_mode == "planar"
    assert spec.alphas[0] == pytest.approx(math.pi / 4)


def test_spec_validation(spec):
    with pytest.raises(ValueError):
        GameSpec(spec.dynamics, spec.initial_state, spec.goals, 1)
    with pytest.raises(ValueError):
        GameSpec(spec.dynamics, spec.initial_state, spec.goals, 10, pairs=[(0, 0)])
    with pytest.raises(ValueError):
        GameSpec(spec.dynamics, spec.initial_state, spec.goals, 10, pairs=[(0, 2)])
    with pytest.raises(ValueError):
        GameSpec(spec.dynamics, spec.initial_state, spec.goals[:, :1], 10)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(-4, 4), omega=st.floats(-0.1, 0.1), T=st.integers(2, 60))
def test_normals_are_unit_and_rotate(alpha, omega, T):
    n = hyperplane_normals(alpha, omega, T)[0]
    assert n.shape == (T - 1, 2)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    t = np.arange(2, T + 1)
    np.testing.assert_allclose(n[:, 0], np.cos(alpha + omega * (t - 1)), atol=1e-12)


def test_hyperplane_value_formula():
    # normal along +x, zone of radius 2 around p_j = (1, 0): margin of p_i = (10, 3) is 10 - 1 - 2
    assert hyperplane_value(0.0, 0.0, 2.0, 2, (10.0, 3.0), (1.0, 0.0)) == pytest.approx(7.0)
    with pytest.raises(ValueError):
        hyperplane_value(0.0, 0.0, 2.0, 1, (10.0, 3.0), (1.0, 0.0))


def test_hyperplane_values_match_scalar(spec):
    rng = np.random.default_rng(0)
    states = rng.normal(scale=50, size=(spec.horizon, 2, 4))
    th = truth_theta(spec)
    H = hyperplane_values(spec, th, states)
    for t in (2, 17, 44):
        h = hyperplane_value(spec.alphas[0], 0.015, 30.0, t, states[t - 1, 0], states[t - 1, 1])
        assert H[0, t - 2] == pytest.approx(h, abs=1e-10)


def test_geometry_tangent_points(spec):
    rng = np.random.default_rng(1)
    states = rng.normal(size=(spec.horizon, 2, 4))
    g = hyperplane_geometry(spec, truth_theta(spec), 0, states)
    np.testing.assert_allclose(np.linalg.norm(g.tangent_points - states[1:, 1, :2], axis=1), 30.0)


def test_theta_selection_and_roundtrip(spec):
    th = ThetaParams.uniform(spec, 0.01, 20.0)
    assert th.learnable_names() == ["omega[0]", "rho[0]"]
    vec = th.learnable_vector()
    np.testing.assert_allclose(vec, [0.01, math.log(20.0)])
    back = th.with_learnable_vector(vec)
    assert back.rho[0] == pytest.approx(20.0, rel=1e-12)
    assert back.omega[0] == th.omega[0]


@settings(max_examples=40, deadline=None)
@given(rho=st.floats(1e-3, 1e4), omega=st.floats(-1, 1))
def test_log_radius_roundtrip(rho, omega):
    spec = table_scenario()
    th = ThetaParams.uniform(spec, omega, rho)
    again = th.with_learnable_vector(th.learnable_vector())
    assert abs(again.rho[0] - rho) <= 1e-12 * rho
    assert again.omega[0] == omega


def test_tied_selection_sums_columns():
    spec = circle_scenario(3)
    th = ThetaParams.uniform(spec, 0.01, 20.0, tied=True, learn_xi=True)
    S = th.selection()
    assert S.shape == (2 * 3 + 3, 2 + 3)
    np.testing.assert_array_equal(S[:3, 0], 1.0)
    np.testing.assert_array_equal(S[3:6, 1], 1.0)
    assert th.learnable_names() == ["omega", "rho", "xi[0]", "xi[1]", "xi[2]"]
    moved = th.with_learnable_vector([0.02, math.log(25.0), 1e-3, 1e-3, 1e-3])
    np.testing.assert_allclose(moved.rho, 25.0)


def test_theta_validation():
    with pytest.raises(ValueError):
        ThetaParams([0.1], [-1.0], [1e-4])
    with pytest.raises(ValueError):
        ThetaParams([0.1, 0.2], [1.0], [1e-4])
    with pytest.raises(ValueError):
        ThetaParams([0.1, 0.2], [1.0, 1.0], [1e-4], tied=True)


def test_trajectory_accessors():
    states = np.arange(3 * 2 * 4, dtype=float).reshape(3, 2, 4)
    controls = np.zeros((2, 2, 2))
    tr = Trajectory(states, controls)
    assert tr.horizon == 3 and tr.num_robots == 2
    np.testing.assert_array_equal(tr.at(1), states[0].reshape(-1))
    np.testing.assert_array_equal(tr.others(0)[:, 0], states[:, 1])
    again = Trajectory.from_flat(tr.flat_states(), tr.flat_controls(), 2)
    np.testing.assert_array_equal(again.states, states)
    with pytest.raises(ValueError):
        Trajectory(states, np.zeros((3, 2, 2)))


def test_initial_separation(spec):
    check_initial_separation(spec, truth_theta(spec))
    with pytest.raises(InfeasibleGeometryError):
        check_initial_separation(spec, ThetaParams.uniform(spec, 0.015, 150.0))


def test_rollout_and_report(spec):
    traj = rollout(spec, np.zeros((43, 2, 2)))
    rep = feasibility_report(spec, truth_theta(spec), traj)
    assert rep.dynamics_residual == 0.0
    assert rep.max_thrust == 0.0
    assert rep.min_distance == pytest.approx(min_pairwise_distance(traj))
    assert objective_value(spec, truth_theta(spec), traj, 0) == pytest.approx(200.0**2, rel=1e-2)


def test_all_pairs():
    assert all_pairs(4) == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
    assert len(all_pairs(6)) == 15
