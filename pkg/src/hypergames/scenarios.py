"""Ready-made games used by the tests, demos and experiments."""

from __future__ import annotations

import numpy as np

from hypergames.game import GameSpec, ThetaParams, all_pairs
from hypergames.hcw import OrbitConstants, hcw_matrices, planar_dynamics

TRUE_OMEGA = 0.015  # rad/s
TRUE_RHO = 30.0  # m
GUESS_OMEGA = 0.008
GUESS_RHO = 10.0
CONTROL_WEIGHT = 1e-4


def horizon_from_time(total_time: float, dt: float) -> int:
    """Number of states covering ``total_time`` at spacing ``dt``."""
    steps = total_time / dt
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ValueError(f"total time {total_time} is not a positive multiple of dt {dt}")
    return int(round(steps))


def table_scenario(constants: OrbitConstants | None = None, total_time: float = 220.0) -> GameSpec:
    """Two robots swapping sides of a 200 m square in the orbital plane."""
    constants = constants or OrbitConstants()
    return GameSpec(
        dynamics=planar_dynamics(constants),
        initial_state=[[0.0, 100.0, 0.0, 0.0], [-100.0, 0.0, 0.0, 0.0]],
        goals=[[0.0, -100.0], [100.0, 0.0]],
        horizon=horizon_from_time(total_time, constants.dt),
        dt=constants.dt,
        thrust_limit=1.0,
        pairs=[(0, 1)],
    )


def circle_scenario(
    num_robots: int = 6,
    radius: float = 100.0,
    constants: OrbitConstants | None = None,
    total_time: float = 220.0,
    pairs=None,
) -> GameSpec:
    """Robots evenly spaced on a circle, each heading to the antipodal point."""
    constants = constants or OrbitConstants()
    ang = 2.0 * np.pi * np.arange(num_robots) / num_robots + np.pi / 2
    start = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    x0 = np.hstack([start, np.zeros_like(start)])
    return GameSpec(
        dynamics=planar_dynamics(constants),
        initial_state=x0,
        goals=-start,
        horizon=horizon_from_time(total_time, constants.dt),
        dt=constants.dt,
        thrust_limit=1.0,
        pairs=all_pairs(num_robots) if pairs is None else pairs,
    )


def spatial_dynamics(constants: OrbitConstants | None = None):
    return hcw_matrices(constants or OrbitConstants())


def truth_theta(spec: GameSpec, **kw) -> ThetaParams:
    return ThetaParams.uniform(spec, TRUE_OMEGA, TRUE_RHO, CONTROL_WEIGHT, **kw)


def guess_theta(spec: GameSpec, **kw) -> ThetaParams:
    return ThetaParams.uniform(spec, GUESS_OMEGA, GUESS_RHO, CONTROL_WEIGHT, **kw)
