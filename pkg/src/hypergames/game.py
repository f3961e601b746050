"""Parametric collision-avoidance game: robots, objectives and rotating hyperplanes.

Robots and pairs are indexed from zero. Time follows the 1-based convention
``t = 1..T`` in docstrings; arrays are 0-based so ``states[0]`` is ``x_1``.
Hyperplane constraints exist for ``t = 2..T`` and the hyperplane normal at
time ``t`` has angle ``alpha + omega * (t - 1)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from hypergames.hcw import LinearDynamics, propagate


class DegenerateGeometryError(ValueError):
    """Two robots of a constrained pair start at the same planar position."""


class InfeasibleGeometryError(ValueError):
    """A pair starts closer than its keep-out radius."""


@dataclass(frozen=True)
class GameSpec:
    """Everything about a game instance except the learnable parameters.

    Attributes:
        dynamics: per-robot linear dynamics (4 states planar, 6 states 3D).
        initial_state: array ``(N, state_dim)``.
        goals: goal positions, ``(N, 2)`` planar or ``(N, 3)`` in 3D.
        horizon: number of time steps ``T`` (states ``x_1..x_T``).
        dt: sampling interval in seconds, used for guesses and exports.
        thrust_limit: per-axis force bound ``u_max`` in Newtons.
        pairs: ordered pairs ``(i, j)``; robot ``i`` keeps out of a zone on ``j``.
        shared_multipliers: one multiplier per hyperplane constraint used by
            both robots of the pair (normalized equilibrium). With ``False``
            each robot carries its own copy.
    """

    dynamics: LinearDynamics
    initial_state: np.ndarray
    goals: np.ndarray
    horizon: int
    dt: float = 5.0
    thrust_limit: float = 1.0
    pairs: tuple = ()
    shared_multipliers: bool = True
    alphas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x1 = np.array(self.initial_state, dtype=float)
        goals = np.array(self.goals, dtype=float)
        if x1.ndim == 1:
            x1 = x1.reshape(-1, self.dynamics.state_dim)
        if x1.shape[1] != self.dynamics.state_dim:
            raise ValueError(f"initial state has {x1.shape[1]} components per robot, dynamics expects {self.dynamics.state_dim}")
        n_robots = x1.shape[0]
        if goals.shape != (n_robots, self.position_dim):
            raise ValueError(f"goals must have shape {(n_robots, self.position_dim)}, got {goals.shape}")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not self.thrust_limit > 0:
            raise ValueError("thrust limit must be positive")
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        for i, j in pairs:
            if i == j or not (0 <= i < n_robots and 0 <= j < n_robots):
                raise ValueError(f"invalid pair {(i, j)} for {n_robots} robots")
        if len(set(pairs)) != len(pairs):
            raise ValueError("duplicate pairs")
        x1.setflags(write=False)
        goals.setflags(write=False)
        object.__setattr__(self, "initial_state", x1)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "pairs", pairs)
        alphas = np.array([alpha_from_initial_state(x1, p) for p in pairs], dtype=float)
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)

    @property
    def num_robots(self) -> int:
        return self.initial_state.shape[0]

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    @property
    def state_dim(self) -> int:
        return self.dynamics.state_dim

    @property
    def control_dim(self) -> int:
        return self.dynamics.control_dim

    @property
    def position_dim(self) -> int:
        return self.dynamics.state_dim // 2

    @property
    def spatial_mode(self) -> str:
        return "planar" if self.position_dim == 2 else "full3d"

    def pairs_of(self, robot: int) -> list[int]:
        """Indices of the pairs that involve ``robot`` (either role)."""
        return [k for k, (i, j) in enumerate(self.pairs) if robot in (i, j)]

    def with_initial_state(self, initial_state) -> "GameSpec":
        return replace(self, initial_state=initial_state)


def all_pairs(num_robots: int) -> tuple:
    return tuple(itertools.combinations(range(num_robots), 2))


@dataclass(frozen=True)
class ThetaParams:
    """Hyperplane parameters per pair and control weights per robot.

    ``omega`` is the hyperplane rotation per time step, ``rho`` the keep-out
    radius in metres and ``xi`` the control-effort weight of each robot. The
    ``learn_*`` masks select which entries are free during learning. With
    ``tied`` all pairs share a single ``(omega, rho)``.
    """

    omega: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    learn_omega: np.ndarray = None
    learn_rho: np.ndarray = None
    learn_xi: np.ndarray = None
    tied: bool = False

    def __post_init__(self):
        omega = np.atleast_1d(np.array(self.omega, dtype=float))
        rho = np.atleast_1d(np.array(self.rho, dtype=float))
        xi = np.atleast_1d(np.array(self.xi, dtype=float))
        if omega.shape != rho.shape:
            raise ValueError("omega and rho must have one entry per pair")
        if np.any(rho <= 0):
            raise ValueError("keep-out radius must be positive")
        if np.any(xi < 0):
            raise ValueError("control weights must be non-negative")
        if self.tied and omega.size and (np.ptp(omega) != 0 or np.ptp(rho) != 0):
            raise ValueError("tied parameters need identical omega and rho across pairs")
        masks = {
            "learn_omega": (self.learn_omega, omega.size, True),
            "learn_rho": (self.learn_rho, rho.size, True),
            "learn_xi": (self.learn_xi, xi.size, False),
        }
        for name, (mask, size, default) in masks.items():
            m = np.full(size, default) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), (size,)).copy()
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        for name, arr in (("omega", omega), ("rho", rho), ("xi", xi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, spec: GameSpec, omega: float, rho: float, xi: float = 1e-4, **kw) -> "ThetaParams":
        p = spec.num_pairs
        return cls(np.full(p, omega), np.full(p, rho), np.full(spec.num_robots, xi), **kw)

    @property
    def num_pairs(self) -> int:
        return self.omega.size

    # -- learnable vector -------------------------------------------------
    # The full internal coordinates are [omega_p..., log rho_p..., xi_i...].
    # ``selection`` maps learnable coordinates onto them; tying sums columns.

    def selection(self) -> np.ndarray:
        P, N = self.num_pairs, self.xi.size
        cols = []
        for mask, offset in ((self.learn_omega, 0), (self.learn_rho, P)):
            if self.tied:
                if mask.any():
                    col = np.zeros(2 * P + N)
                    col[offset + np.flatnonzero(mask)] = 1.0
                    cols.append(col)
            else:
                for k in np.flatnonzero(mask):
                    col = np.zeros(2 * P + N)
                    col[offset + k] = 1.0
                    cols.append(col)
        for k in np.flatnonzero(self.learn_xi):
            col = np.zeros(2 * P + N)
            col[2 * P + k] = 1.0
            cols.append(col)
        return np.array(cols).T.reshape(2 * P + N, len(cols))

    def full_internal(self) -> np.ndarray:
        return np.concatenate([self.omega, np.log(self.rho), self.xi])

    def learnable_vector(self) -> np.ndarray:
        """Learnable entries in internal units (``rho`` as its logarithm)."""
        S = self.selection()
        full = self.full_internal()
        # each selection column has equal entries, so averaging recovers the value
        return (S.T @ full) / np.maximum(S.sum(axis=0), 1)

    def with_learnable_vector(self, vec) -> "ThetaParams":
        vec = np.asarray(vec, dtype=float)
        S = self.selection()
        full = self.full_internal()
        touched = S.sum(axis=1) > 0
        full = np.where(touched, S @ vec, full)
        P = self.num_pairs
        return replace(self, omega=full[:P], rho=np.exp(full[P : 2 * P]), xi=full[2 * P :])

    def learnable_names(self) -> list[str]:
        names = []
        if self.tied:
            names += ["omega"] if self.learn_omega.any() else []
            names += ["rho"] if self.learn_rho.any() else []
        else:
            names += [f"omega[{k}]" for k in np.flatnonzero(self.learn_omega)]
            names += [f"rho[{k}]" for k in np.flatnonzero(self.learn_rho)]
        names += [f"xi[{k}]" for k in np.flatnonzero(self.learn_xi)]
        return names


@dataclass(frozen=True)
class Trajectory:
    """States ``(T, N, state_dim)`` and controls ``(T-1, N, control_dim)``."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float)
        if states.ndim != 3 or controls.ndim != 3:
            raise ValueError("states and controls must be 3D arrays (time, robot, component)")
        if controls.shape[0] != states.shape[0] - 1 or controls.shape[1] != states.shape[1]:
            raise ValueError(f"controls {controls.shape} do not match states {states.shape}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def num_robots(self) -> int:
        return self.states.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.states[..., : self.states.shape[-1] // 2]

    def robot(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return self.states[:, i], self.controls[:, i]

    def at(self, t: int) -> np.ndarray:
        """Stacked state of all robots at 1-based time ``t``."""
        return self.states[t - 1].reshape(-1)

    def others(self, i: int) -> np.ndarray:
        return np.delete(self.states, i, axis=1)

    def flat_states(self) -> np.ndarray:
        return self.states.reshape(self.horizon, -1)

    def flat_controls(self) -> np.ndarray:
        return self.controls.reshape(self.horizon - 1, -1)

    @classmethod
    def from_flat(cls, states, controls, num_robots: int) -> "Trajectory":
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        return cls(states.reshape(states.shape[0], num_robots, -1), controls.reshape(controls.shape[0], num_robots, -1))


def alpha_from_initial_state(initial_state, pair) -> float:
    """Angle between the x-axis and ``p_i - p_j`` at the first time step."""
    i, j = pair
    d = np.asarray(initial_state)[i, :2] - np.asarray(initial_state)[j, :2]
    if not np.any(d):
        raise DegenerateGeometryError(f"robots {i} and {j} share an initial planar position")
    return math.atan2(d[1], d[0])


def normal_angles(alpha, omega, horizon: int) -> np.ndarray:
    """Normal angles for ``t = 2..T``; shape ``(P, T-1)``."""
    k = np.arange(1, horizon)
    return np.asarray(alpha)[:, None] + np.asarray(omega)[:, None] * k[None, :]


def hyperplane_normals(alpha, omega, horizon: int) -> np.ndarray:
    ang = normal_angles(np.atleast_1d(alpha), np.atleast_1d(omega), horizon)
    return np.stack([np.cos(ang), np.sin(ang)], axis=-1)


@dataclass(frozen=True)
class HyperplaneGeometry:
    pair: tuple
    alpha: float
    normals: np.ndarray  # (T-1, 2)
    tangent_points: np.ndarray  # (T-1, 2)


def hyperplane_geometry(spec: GameSpec, theta: ThetaParams, k: int, states) -> HyperplaneGeometry:
    """Normals and tangent points of pair ``k`` along a state trajectory."""
    states = np.asarray(states)
    n = hyperplane_normals(spec.alphas[k], theta.omega[k], spec.horizon)[0]
    j = spec.pairs[k][1]
    m = states[1:, j, :2] + theta.rho[k] * n
    return HyperplaneGeometry(spec.pairs[k], float(spec.alphas[k]), n, m)


def hyperplane_value(alpha: float, omega: float, rho: float, t: int, p_i, p_j) -> float:
    """Signed margin ``n_t . (p_i - m_t)`` of robot ``i`` at 1-based time ``t``.

    The keep-out zone is centred on robot ``j``: ``m_t = p_j + rho n_t``.
    """
    if t < 2:
        raise ValueError("hyperplane constraints start at t = 2")
    ang = alpha + omega * (t - 1)
    n = np.array([math.cos(ang), math.sin(ang)])
    m = np.asarray(p_j, dtype=float)[:2] + rho * n
    return float(n @ (np.asarray(p_i, dtype=float)[:2] - m))


def hyperplane_values(spec: GameSpec, theta: ThetaParams, states) -> np.ndarray:
    """All hyperplane margins, shape ``(P, T-1)`` for ``t = 2..T``."""
    states = np.asarray(states)
    if spec.num_pairs == 0:
        return np.zeros((0, spec.horizon - 1))
    n = hyperplane_normals(spec.alphas, theta.omega, spec.horizon)
    I = [i for i, _ in spec.pairs]
    J = [j for _, j in spec.pairs]
    d = states[1:, I, :2] - states[1:, J, :2]  # (T-1, P, 2)
    return np.einsum("ptc,tpc->pt", n, d) - theta.rho[:, None]


def objective_value(spec: GameSpec, theta: ThetaParams, traj: Trajectory, robot: int) -> float:
    """Terminal goal distance squared plus weighted control effort."""
    err = traj.positions[-1, robot] - spec.goals[robot]
    return float(err @ err + theta.xi[robot] * np.sum(traj.controls[:, robot] ** 2))


def dynamics_residual(spec: GameSpec, traj: Trajectory) -> float:
    A, B = spec.dynamics.A, spec.dynamics.B
    x = traj.states
    pred = np.einsum("ab,tnb->tna", A, x[:-1]) + np.einsum("ab,tnb->tna", B, traj.controls)
    first = np.max(np.abs(x[0] - spec.initial_state)) if x.shape[0] else 0.0
    return float(max(np.max(np.abs(x[1:] - pred), initial=0.0), first))


@dataclass(frozen=True)
class FeasibilityReport:
    min_hyperplane: np.ndarray  # per pair
    min_distance: float  # over all robot pairs and t = 2..T, planar
    max_thrust: float
    thrust_limit: float
    dynamics_residual: float

    def is_feasible(self, h_tol: float = 1e-6, u_tol: float = 1e-8, dyn_tol: float = 1e-8) -> bool:
        return bool(
            np.all(self.min_hyperplane >= -h_tol)
            and self.max_thrust <= self.thrust_limit + u_tol
            and self.dynamics_residual <= dyn_tol
        )

    def to_dict(self) -> dict:
        return {
            "min_hyperplane": [float(h) for h in self.min_hyperplane],
            "min_distance": self.min_distance,
            "max_thrust": self.max_thrust,
            "thrust_limit": self.thrust_limit,
            "dynamics_residual": self.dynamics_residual,
            "feasible": self.is_feasible(),
        }


def min_pairwise_distance(traj: Trajectory) -> float:
    p = traj.states[1:, :, :2]
    N = p.shape[1]
    if N < 2:
        return math.inf
    iu = np.triu_indices(N, 1)
    d = np.linalg.norm(p[:, :, None] - p[:, None, :], axis=-1)[:, iu[0], iu[1]]
    return float(d.min())


def feasibility_report(spec: GameSpec, theta: ThetaParams, traj: Trajectory) -> FeasibilityReport:
    H = hyperplane_values(spec, theta, traj.states)
    return FeasibilityReport(
        min_hyperplane=H.min(axis=1) if H.size else np.zeros(0),
        min_distance=min_pairwise_distance(traj),
        max_thrust=float(np.max(np.abs(traj.controls), initial=0.0)),
        thrust_limit=spec.thrust_limit,
        dynamics_residual=dynamics_residual(spec, traj),
    )


def check_initial_separation(spec: GameSpec, theta: ThetaParams) -> None:
    """Raise :class:`InfeasibleGeometryError` if a pair starts inside its keep-out zone."""
    p = spec.initial_state[:, :2]
    for k, (i, j) in enumerate(spec.pairs):
        sep = float(np.linalg.norm(p[i] - p[j]))
        if sep <= theta.rho[k]:
            raise InfeasibleGeometryError(
                f"pair {(i, j)} starts {sep:.3f} m apart, inside keep-out radius {theta.rho[k]:.3f} m"
            )


def rollout(spec: GameSpec, controls) -> Trajectory:
    """Propagate every robot from the initial state under ``controls`` ``(T-1, N, m)``."""
    controls = np.asarray(controls, dtype=float)
    states = np.stack([propagate(spec.dynamics, spec.initial_state[i], controls[:, i]) for i in range(spec.num_robots)], axis=1)
    return Trajectory(states, controls)
