"""Monte Carlo experiments around the learner: noisy demonstrations, reconstruction
error, transfer to larger games and sensitivity to initial velocities.

Randomness is drawn from per-trial generators seeded by
``(base_seed, level_index, trial_index)``, so results do not depend on the
order or the process in which trials run.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from hypergames.game import (
    FeasibilityReport,
    GameSpec,
    InfeasibleGeometryError,
    ThetaParams,
    Trajectory,
    feasibility_report,
)
from hypergames.hcw import OrbitConstants, hcw_matrices
from hypergames.learning import LearnerOptions, LearningError, learn_parameters
from hypergames.solver import SolveOptions, SolveResult, solve_linear_qp, solve_mcp

log = logging.getLogger(__name__)

FULL_STATE = "full_state"
POSITIONS_ONLY = "positions_only"

DESK_LEVELS = (0.0, 2.5, 5.0, 10.0, 20.0)
DESK_TRIALS = 5
FULL_LEVELS = tuple(np.linspace(0.0, 20.0, 20))
FULL_TRIALS = 20


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    sigma: float
    seed: int | tuple = 0
    target: str = FULL_STATE

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("noise standard deviation must be non-negative")
        if self.target not in (FULL_STATE, POSITIONS_ONLY):
            raise ValueError(f"unknown noise target {self.target!r}")

    def rng(self) -> np.random.Generator:
        seed = list(self.seed) if isinstance(self.seed, (tuple, list)) else self.seed
        return np.random.default_rng(seed)


def generate_expert(spec: GameSpec, theta: ThetaParams, options: SolveOptions = SolveOptions()) -> Trajectory:
    """Equilibrium trajectory at ``theta``; raises :class:`ExperimentError` if it cannot be certified."""
    result = solve_mcp(spec, theta, options)
    if not result.converged:
        raise ExperimentError(f"expert solve ended with status {result.status} (residual {result.final_residual:.3e})")
    report = feasibility_report(spec, theta, result.trajectory)
    if not report.is_feasible():
        raise ExperimentError(f"expert trajectory fails the feasibility check: {report.to_dict()}")
    return result.trajectory


def corrupt(expert: Trajectory, noise: NoiseModel) -> Trajectory:
    """Add i.i.d. zero-mean Gaussian noise to the targeted state entries."""
    if noise.sigma == 0:
        return expert
    states = expert.states.copy()
    rng = noise.rng()
    if noise.target == FULL_STATE:
        states += rng.normal(0.0, noise.sigma, states.shape)
    else:
        npos = states.shape[-1] // 2
        states[..., :npos] += rng.normal(0.0, noise.sigma, states[..., :npos].shape)
    return Trajectory(states, expert.controls)


def reconstruction_error(
    spec: GameSpec,
    theta_truth: ThetaParams,
    theta_learned: ThetaParams,
    options: SolveOptions = SolveOptions(),
    truth_trajectory: Trajectory | None = None,
) -> float:
    """Mean squared position gap between the two equilibria, per robot and time step."""
    if truth_trajectory is None:
        truth_trajectory = generate_expert(spec, theta_truth, options)
    learned = solve_mcp(spec, theta_learned, options)
    if not learned.converged:
        raise ExperimentError(f"solve at the learned parameters ended with status {learned.status}")
    gap = truth_trajectory.positions - learned.trajectory.positions
    T, N = gap.shape[:2]
    return float(np.sum(gap**2) / (N * T))


# -- noise sweep ---------------------------------------------------------


@dataclass
class TrialRecord:
    level: int
    sigma: float
    trial: int
    omega: np.ndarray
    rho: np.ndarray
    error: float  # reconstruction error D, nan when unavailable
    status: str
    iterations: int
    wall_time: float

    def row(self) -> list:
        return [self.level, self.sigma, self.trial, *self.omega, *self.rho, self.error, self.status, self.iterations, self.wall_time]


def _quantiles(values) -> tuple[float, float, float]:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return (np.nan, np.nan, np.nan)
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    return float(q50), float(q25), float(q75)


@dataclass
class SweepResult:
    levels: tuple
    trials_per_level: int
    records: list = field(default_factory=list)

    def level_records(self, level: int) -> list:
        return [r for r in self.records if r.level == level]

    def aggregate(self) -> list[dict]:
        """Median and interquartile range of omega, rho and D per level."""
        out = []
        for k, sigma in enumerate(self.levels):
            recs = self.level_records(k)
            row = {"level": k, "sigma": float(sigma), "trials": len(recs), "succeeded": sum(np.isfinite(r.error) for r in recs)}
            for name, vals in (
                ("omega", [r.omega[0] for r in recs]),
                ("rho", [r.rho[0] for r in recs]),
                ("error", [r.error for r in recs]),
            ):
                row[f"{name}_median"], row[f"{name}_q25"], row[f"{name}_q75"] = _quantiles(vals)
            out.append(row)
        return out

    def median_errors(self) -> np.ndarray:
        return np.array([row["error_median"] for row in self.aggregate()])

    def trial_rows(self) -> list:
        P = self.records[0].omega.size if self.records else 1
        header = ["level", "sigma", "trial"] + [f"omega_hat[{k}]" for k in range(P)] + [f"rho_hat[{k}]" for k in range(P)]
        return [header + ["D", "status", "iterations", "wall_time"]] + [r.row() for r in self.records]

    def aggregate_rows(self) -> list:
        agg = self.aggregate()
        if not agg:
            return [[]]
        header = list(agg[0])
        return [header] + [[row[h] for h in header] for row in agg]


@dataclass(frozen=True)
class _TrialTask:
    spec: GameSpec
    theta_truth: ThetaParams
    theta0: ThetaParams
    expert: Trajectory
    level: int
    sigma: float
    trial: int
    base_seed: int
    target: str
    learner: LearnerOptions


def _run_trial(task: _TrialTask) -> TrialRecord:
    t0 = time.perf_counter()
    noise = NoiseModel(task.sigma, (task.base_seed, task.level, task.trial), task.target)
    observed = corrupt(task.expert, noise)
    nan = np.full(task.theta0.num_pairs, np.nan)
    try:
        theta, trace = learn_parameters(task.spec, task.theta0, observed, task.learner)
    except LearningError as exc:
        log.warning("trial (%d, %d) failed at the initial parameters: %s", task.level, task.trial, exc)
        return TrialRecord(task.level, task.sigma, task.trial, nan, nan, np.nan, "solver_failed", 0, time.perf_counter() - t0)
    try:
        err = reconstruction_error(task.spec, task.theta_truth, theta, task.learner.solver, task.expert)
    except (ExperimentError, InfeasibleGeometryError):
        err = np.nan
    return TrialRecord(
        task.level, task.sigma, task.trial, theta.omega.copy(), theta.rho.copy(), err, trace.status, trace.iterations - 1, time.perf_counter() - t0
    )


def _map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def noise_sweep(
    spec: GameSpec,
    theta_truth: ThetaParams,
    theta0: ThetaParams,
    levels=DESK_LEVELS,
    trials_per_level: int = DESK_TRIALS,
    base_seed: int = 0,
    learner: LearnerOptions = LearnerOptions(),
    target: str = FULL_STATE,
    threads: int = 1,
) -> SweepResult:
    """Learn from noise-corrupted copies of the truth equilibrium at every noise level.

    Failed trials are kept with status and a ``nan`` error; the sweep itself
    only fails if the noise-free expert cannot be generated.
    """
    expert = generate_expert(spec, theta_truth, learner.solver)
    tasks = [
        _TrialTask(spec, theta_truth, theta0, expert, k, float(sigma), trial, base_seed, target, learner)
        for k, sigma in enumerate(levels)
        for trial in range(trials_per_level)
    ]
    records = _map(_run_trial, tasks, threads)
    records.sort(key=lambda r: (r.level, r.trial))
    return SweepResult(tuple(float(s) for s in levels), trials_per_level, records)


# -- transfer to a larger game ---------------------------------------------


def transfer_theta(theta: ThetaParams, spec: GameSpec) -> ThetaParams:
    """Reuse the first pair's ``(omega, rho)`` and first robot's weight for every pair of ``spec``."""
    return ThetaParams.uniform(spec, float(theta.omega[0]), float(theta.rho[0]), float(theta.xi[0]))


@dataclass
class GeneralizationResult:
    status: str
    result: SolveResult | None
    report: FeasibilityReport | None
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status == "converged" and self.report is not None and self.report.is_feasible()

    def to_dict(self) -> dict:
        out = {"status": self.status, "success": self.success, "message": self.message}
        if self.result is not None:
            out["iterations"] = self.result.iterations
            out["final_residual"] = self.result.final_residual
        if self.report is not None:
            out["feasibility"] = self.report.to_dict()
        return out


def multi_robot_generalization(
    theta_learned: ThetaParams, spec: GameSpec, options: SolveOptions = SolveOptions()
) -> GeneralizationResult:
    """Solve a game with more robots using parameters learned on a smaller one."""
    theta = theta_learned if theta_learned.num_pairs == spec.num_pairs else transfer_theta(theta_learned, spec)
    try:
        result = solve_mcp(spec, theta, options)
    except InfeasibleGeometryError as exc:
        return GeneralizationResult("infeasible_geometry", None, None, str(exc))
    return GeneralizationResult(result.status, result, feasibility_report(spec, theta, result.trajectory))


# -- initial velocity perturbations ----------------------------------------


@dataclass
class VelocitySweepResult:
    sigmas: tuple
    trials: int
    successes: np.ndarray  # (levels,) counts
    outcomes: list = field(default_factory=list)  # (level, trial, status, feasible)

    @property
    def success_rate(self) -> np.ndarray:
        return self.successes / self.trials

    def trend_slope(self) -> float:
        """Least-squares slope of success rate against velocity noise level."""
        if len(self.sigmas) < 2:
            return 0.0
        return float(np.polyfit(np.asarray(self.sigmas, dtype=float), self.success_rate, 1)[0])

    def rows(self) -> list:
        out = [["sigma_v", "trials", "successes", "success_rate"]]
        for s, n, r in zip(self.sigmas, self.successes, self.success_rate):
            out.append([float(s), self.trials, int(n), float(r)])
        return out


@dataclass(frozen=True)
class _VelocityTask:
    spec: GameSpec
    theta: ThetaParams
    level: int
    sigma: float
    trial: int
    base_seed: int
    options: SolveOptions


def perturb_velocities(spec: GameSpec, sigma: float, rng: np.random.Generator) -> GameSpec:
    x0 = spec.initial_state.copy()
    npos = spec.position_dim
    x0[:, npos:] += rng.normal(0.0, sigma, x0[:, npos:].shape) if sigma > 0 else 0.0
    return spec.with_initial_state(x0)


def _run_velocity_trial(task: _VelocityTask):
    rng = np.random.default_rng([task.base_seed, task.level, task.trial])
    spec = perturb_velocities(task.spec, task.sigma, rng)
    try:
        result = solve_mcp(spec, task.theta, task.options)
    except InfeasibleGeometryError:
        return task.level, task.trial, "infeasible_geometry", False
    ok = result.converged and feasibility_report(spec, task.theta, result.trajectory).is_feasible()
    return task.level, task.trial, result.status, bool(ok)


def velocity_sensitivity_sweep(
    spec: GameSpec,
    theta: ThetaParams,
    velocity_sigmas,
    trials: int = 20,
    base_seed: int = 0,
    options: SolveOptions = SolveOptions(),
    threads: int = 1,
) -> VelocitySweepResult:
    """Fraction of forward solves that converge to a feasible trajectory when the
    initial velocities (zero in the nominal game) are perturbed."""
    if theta.num_pairs != spec.num_pairs:
        theta = transfer_theta(theta, spec)
    tasks = [
        _VelocityTask(spec, theta, k, float(s), trial, base_seed, options)
        for k, s in enumerate(velocity_sigmas)
        for trial in range(trials)
    ]
    outcomes = sorted(_map(_run_velocity_trial, tasks, threads))
    successes = np.zeros(len(velocity_sigmas), dtype=int)
    for level, _, _, ok in outcomes:
        successes[level] += ok
    return VelocitySweepResult(tuple(float(s) for s in velocity_sigmas), trials, successes, outcomes)


# -- lifting planar results to three dimensions ----------------------------


@dataclass(frozen=True)
class OutOfPlaneProfile:
    """Cross-track initial position/velocity and goal per robot (metres, m/s)."""

    z0: np.ndarray
    vz0: np.ndarray
    z_goal: np.ndarray

    @classmethod
    def zeros(cls, num_robots: int) -> "OutOfPlaneProfile":
        z = np.zeros(num_robots)
        return cls(z, z, z)


def out_of_plane_matrices(constants: OrbitConstants):
    """``(A_z, B_z)`` of the decoupled cross-track axis."""
    full = hcw_matrices(constants)
    return full.A[np.ix_([2, 5], [2, 5])], full.B[np.ix_([2, 5], [2])]


def solve_out_of_plane(
    constants: OrbitConstants,
    horizon: int,
    z0: float,
    vz0: float,
    z_goal: float,
    xi: float,
    thrust_limit: float,
    options: SolveOptions = SolveOptions(),
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-track states ``(T, 2)`` and thrust ``(T-1,)`` minimising
    ``(z_T - z_goal)^2 + xi * sum(u^2)`` subject to the dynamics and thrust box."""
    Az, Bz = out_of_plane_matrices(constants)
    S = horizon - 1
    n = 3 * S  # [s_2..s_T (2 each), u_1..u_{T-1}]
    Q = sp.lil_matrix((n, n))
    q = np.zeros(n)
    Q[2 * (S - 1), 2 * (S - 1)] = 2.0
    q[2 * (S - 1)] = -2.0 * z_goal
    for a in range(S):
        Q[2 * S + a, 2 * S + a] = 2.0 * xi
    E = sp.lil_matrix((2 * S, n))
    e = np.zeros(2 * S)
    for a in range(S):
        E[2 * a : 2 * a + 2, 2 * a : 2 * a + 2] = np.eye(2)
        E[2 * a : 2 * a + 2, 2 * S + a] = -Bz
        if a == 0:
            e[:2] = Az @ np.array([z0, vz0])
        else:
            E[2 * a : 2 * a + 2, 2 * (a - 1) : 2 * a] = -Az
    C = sp.vstack([sp.hstack([sp.csr_matrix((S, 2 * S)), sp.identity(S)]), sp.hstack([sp.csr_matrix((S, 2 * S)), -sp.identity(S)])])
    d = np.full(2 * S, -thrust_limit)
    out = solve_linear_qp(Q.tocsr(), q, E.tocsr(), e, C, d, options)
    if not out.converged:
        raise ExperimentError(f"out-of-plane solve ended with status {out.status}")
    y = out.z[:n]
    u = np.clip(y[2 * S :], -thrust_limit, thrust_limit)
    states = np.empty((horizon, 2))
    states[0] = z0, vz0
    for a in range(S):
        states[a + 1] = Az @ states[a] + Bz[:, 0] * u[a]
    return states, u


def embed_3d(
    planar: Trajectory,
    profile: OutOfPlaneProfile,
    constants: OrbitConstants = OrbitConstants(),
    xi=1e-4,
    thrust_limit: float = 1.0,
    options: SolveOptions = SolveOptions(),
) -> Trajectory:
    """Stack a planar equilibrium with independently optimised cross-track motion."""
    T, N, nx = planar.states.shape
    if nx != 4:
        raise ValueError("embed_3d expects a planar trajectory")
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (N,))
    states = np.zeros((T, N, 6))
    controls = np.zeros((T - 1, N, 3))
    states[..., [0, 1, 3, 4]] = planar.states
    controls[..., :2] = planar.controls
    for i in range(N):
        if profile.z0[i] == 0 and profile.vz0[i] == 0 and profile.z_goal[i] == 0:
            continue
        zs, uz = solve_out_of_plane(constants, T, profile.z0[i], profile.vz0[i], profile.z_goal[i], xi[i], thrust_limit, options)
        states[:, i, 2], states[:, i, 5] = zs[:, 0], zs[:, 1]
        controls[:, i, 2] = uz
    return Trajectory(states, controls)


def spatial_spec(spec: GameSpec, constants: OrbitConstants, profile: OutOfPlaneProfile) -> GameSpec:
    """3D counterpart of a planar game, used to check embedded trajectories."""
    x0 = np.zeros((spec.num_robots, 6))
    x0[:, [0, 1, 3, 4]] = spec.initial_state
    x0[:, 2], x0[:, 5] = profile.z0, profile.vz0
    goals = np.column_stack([spec.goals, profile.z_goal])
    return replace(spec, dynamics=hcw_matrices(constants), initial_state=x0, goals=goals)
