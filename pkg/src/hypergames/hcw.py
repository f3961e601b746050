"""Discrete-time Hill-Clohessy-Wiltshire relative motion.

States are ordered ``[x, y, z, vx, vy, vz]`` in the local-vertical frame of a
circular reference orbit (x radial, y along-track, z cross-track). Controls are
thrust forces ``[Fx, Fy, Fz]`` in Newtons held constant over each interval.
The planar reduction keeps ``[x, y, vx, vy]`` and ``[Fx, Fy]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_MU = 3.986004418e14  # m^3/s^2
EARTH_RADIUS = 6.371e6  # m

PLANAR_STATE_IDX = (0, 1, 3, 4)
PLANAR_CONTROL_IDX = (0, 1)


def mean_motion(altitude: float, mu: float = EARTH_MU, earth_radius: float = EARTH_RADIUS) -> float:
    """Angular rate of a circular orbit at ``altitude`` metres, in rad/s."""
    if not altitude > 0:
        raise ValueError(f"orbital altitude must be positive, got {altitude!r}")
    a = earth_radius + altitude
    return math.sqrt(mu / a**3)


@dataclass(frozen=True)
class OrbitConstants:
    orbital_altitude: float = 400e3
    satellite_mass: float = 100.0
    dt: float = 5.0
    gravitational_parameter: float = EARTH_MU
    earth_radius: float = EARTH_RADIUS
    mean_motion: float = field(init=False)

    def __post_init__(self):
        if not self.satellite_mass > 0:
            raise ValueError("satellite mass must be positive")
        if not self.dt >= 0:
            raise ValueError("dt must be non-negative")
        n = mean_motion(self.orbital_altitude, self.gravitational_parameter, self.earth_radius)
        object.__setattr__(self, "mean_motion", n)


@dataclass(frozen=True)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"incompatible shapes A{A.shape}, B{B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("dynamics matrices must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ x + self.B @ u


def _one_minus_cos(s):
    return 2.0 * math.sin(0.5 * s) ** 2


def _s_minus_sin(s):
    # series branch avoids cancellation for the tiny n*dt of low orbits
    if abs(s) < 1e-2:
        s2 = s * s
        return s * s2 / 6.0 * (1.0 - s2 / 20.0 * (1.0 - s2 / 42.0))
    return s - math.sin(s)


def hcw_continuous(n: float, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Continuous-time HCW matrices ``(A_c, B_c)`` straight from the ODEs."""
    Ac = np.zeros((6, 6))
    Ac[0:3, 3:6] = np.eye(3)
    Ac[3, 0] = 3.0 * n**2
    Ac[3, 4] = 2.0 * n
    Ac[4, 3] = -2.0 * n
    Ac[5, 2] = -(n**2)
    Bc = np.zeros((6, 3))
    Bc[3:6, :] = np.eye(3) / mass
    return Ac, Bc


def hcw_transition(n: float, dt: float) -> np.ndarray:
    """Closed-form 6x6 state transition matrix over ``dt``."""
    s = n * dt
    c, sn = math.cos(s), math.sin(s)
    omc = _one_minus_cos(s)
    smsin = _s_minus_sin(s)
    # sin(s)/n and (1-cos s)/n written as dt * (.../s) to survive n -> 0
    sin_over_n = dt * _sinc(s)
    omc_over_n = dt * omc / s if s != 0 else 0.0
    return np.array(
        [
            [4.0 - 3.0 * c, 0.0, 0.0, sin_over_n, 2.0 * omc_over_n, 0.0],
            [-6.0 * smsin, 1.0, 0.0, -2.0 * omc_over_n, dt - 4.0 * smsin / n if n else dt, 0.0],
            [0.0, 0.0, c, 0.0, 0.0, sin_over_n],
            [3.0 * n * sn, 0.0, 0.0, c, 2.0 * sn, 0.0],
            [-6.0 * n * omc, 0.0, 0.0, -2.0 * sn, 4.0 * c - 3.0, 0.0],
            [0.0, 0.0, -n * sn, 0.0, 0.0, c],
        ]
    )


def _sinc(s):
    return math.sin(s) / s if s != 0 else 1.0


def hcw_input_matrix(n: float, dt: float, mass: float) -> np.ndarray:
    """Closed-form 6x3 zero-order-hold input matrix over ``dt``."""
    s = n * dt
    sn = math.sin(s)
    omc = _one_minus_cos(s)
    smsin = _s_minus_sin(s)
    half_dt2 = 0.5 * dt * dt
    # (1 - cos s)/n^2 = dt^2/2 * sinc(s/2)^2
    omc_over_n2 = half_dt2 * _sinc(0.5 * s) ** 2
    smsin_over_n2 = dt * dt * smsin / (s * s) if s != 0 else 0.0
    sin_over_n = dt * _sinc(s)
    omc_over_n = dt * omc / s if s != 0 else 0.0
    B = np.array(
        [
            [omc_over_n2, 2.0 * smsin_over_n2, 0.0],
            [-2.0 * smsin_over_n2, 4.0 * omc_over_n2 - 3.0 * half_dt2, 0.0],
            [0.0, 0.0, omc_over_n2],
            [sin_over_n, 2.0 * omc_over_n, 0.0],
            [-2.0 * omc_over_n, 4.0 * sin_over_n - 3.0 * dt, 0.0],
            [0.0, 0.0, sin_over_n],
        ]
    )
    return B / mass


def hcw_matrices(constants: OrbitConstants) -> LinearDynamics:
    """Discrete 3D HCW dynamics for the given orbit and satellite."""
    n, dt = constants.mean_motion, constants.dt
    return LinearDynamics(hcw_transition(n, dt), hcw_input_matrix(n, dt, constants.satellite_mass))


def planar_dynamics(constants: OrbitConstants) -> LinearDynamics:
    """In-plane ``(x, y, vx, vy)`` subsystem of :func:`hcw_matrices`."""
    full = hcw_matrices(constants)
    return reduce_to_planar(full)


def reduce_to_planar(full: LinearDynamics) -> LinearDynamics:
    si, ci = list(PLANAR_STATE_IDX), list(PLANAR_CONTROL_IDX)
    return LinearDynamics(full.A[np.ix_(si, si)], full.B[np.ix_(si, ci)])


def embed_planar_state(x_planar: np.ndarray) -> np.ndarray:
    """Lift ``(..., 4)`` planar states to ``(..., 6)`` with zero out-of-plane parts."""
    x_planar = np.asarray(x_planar, dtype=float)
    out = np.zeros(x_planar.shape[:-1] + (6,))
    out[..., list(PLANAR_STATE_IDX)] = x_planar
    return out


def propagate(dynamics: LinearDynamics, x1, controls) -> np.ndarray:
    """Roll ``x_{t+1} = A x_t + B u_t`` forward.

    Args:
        dynamics: single-robot dynamics.
        x1: initial state, shape ``(state_dim,)``.
        controls: shape ``(T-1, control_dim)``.

    Returns:
        States of shape ``(T, state_dim)``, the first row being ``x1``.
    """
    x1 = np.asarray(x1, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if x1.shape != (dynamics.state_dim,):
        raise ValueError(f"x1 has shape {x1.shape}, expected ({dynamics.state_dim},)")
    if controls.ndim != 2 or controls.shape[1] != dynamics.control_dim:
        raise ValueError(f"controls has shape {controls.shape}, expected (T-1, {dynamics.control_dim})")
    states = np.empty((controls.shape[0] + 1, dynamics.state_dim))
    states[0] = x1
    for t, u in enumerate(controls):
        states[t + 1] = dynamics.A @ states[t] + dynamics.B @ u
    return states
