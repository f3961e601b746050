"""Gradient-based recovery of hyperplane parameters from an observed trajectory.

Each iteration solves the game at the current parameters, differentiates the
equilibrium, forms the gradient of the state mismatch and takes an Adam step.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from hypergames.game import GameSpec, InfeasibleGeometryError, ThetaParams, Trajectory
from hypergames.sensitivity import loss_gradient, solution_sensitivity, trajectory_loss
from hypergames.solver import SolveOptions, SolveResult, solve_mcp

log = logging.getLogger(__name__)

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
SOLVER_FAILED = "solver_failed"


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float | np.ndarray = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, gradient) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; the returned delta is subtracted from theta."""
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient has non-finite entries")
    if g.shape != state.first_moment.shape:
        raise ValueError(f"gradient shape {g.shape} does not match optimizer state {state.first_moment.shape}")
    k = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**k)
    v_hat = v / (1.0 - state.beta2**k)
    delta = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_hat)
    return replace(state, first_moment=m, second_moment=v, step_count=k), delta


@dataclass(frozen=True)
class LearnerOptions:
    """Learning-loop settings.

    ``learning_rate`` is either one number or a mapping from parameter kind
    (``"omega"``, ``"rho"``, ``"xi"``) to a rate; radii are stepped in log space.
    The rate is multiplied by ``learning_rate_decay`` after every update.
    """

    learning_rate: float | dict = field(default_factory=lambda: {"omega": 2e-3, "rho": 0.2, "xi": 1e-5})
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    learning_rate_decay: float = 0.93
    tolerance: float = 1e-4
    max_iterations: int = 30
    positions_only: bool = False
    max_retreats: int = 3
    solver: SolveOptions = SolveOptions()

    def rates_for(self, theta: ThetaParams) -> np.ndarray:
        names = theta.learnable_names()
        if not isinstance(self.learning_rate, dict):
            return np.full(len(names), float(self.learning_rate))
        kinds = [n.split("[")[0] for n in names]
        return np.array([float(self.learning_rate[k]) for k in kinds])


@dataclass
class TraceEntry:
    iteration: int
    theta: ThetaParams
    loss: float
    grad_norm: float
    solver_status: str
    wall_time: float
    retreats: int = 0


@dataclass
class LearningTrace:
    entries: list = field(default_factory=list)
    status: str = BUDGET_EXHAUSTED
    final_solve: SolveResult | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([e.loss for e in self.entries])

    @property
    def iterations(self) -> int:
        return len(self.entries)

    def write_csv(self, path) -> None:
        """One row per iteration: theta entries in natural units, loss, gradient norm, status."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerows(self.rows())

    def rows(self) -> list:
        if not self.entries:
            return [["iteration", "loss", "grad_norm", "solver_status", "retreats", "wall_time"]]
        P = self.entries[0].theta.num_pairs
        N = self.entries[0].theta.xi.size
        header = ["iteration"] + [f"omega[{k}]" for k in range(P)] + [f"rho[{k}]" for k in range(P)]
        header += [f"xi[{k}]" for k in range(N)] + ["loss", "grad_norm", "solver_status", "retreats", "wall_time"]
        out = [header]
        for e in self.entries:
            th = e.theta
            out.append([e.iteration, *th.omega, *th.rho, *th.xi, e.loss, e.grad_norm, e.solver_status, e.retreats, e.wall_time])
        return out


class LearningError(RuntimeError):
    """The game could not be solved at the initial parameters."""


def _try_solve(spec, theta, options, warm):
    try:
        res = solve_mcp(spec, theta, options, warm_start=warm)
    except InfeasibleGeometryError:
        return None
    return res if res.converged else None


def learn_parameters(
    spec: GameSpec,
    theta0: ThetaParams,
    expert: Trajectory,
    options: LearnerOptions = LearnerOptions(),
) -> tuple[ThetaParams, LearningTrace]:
    """Fit the learnable entries of ``theta0`` so the equilibrium reproduces ``expert``.

    Stops when the gradient norm drops below ``options.tolerance`` or after
    ``options.max_iterations`` parameter updates. When a solve fails after an
    update the update is halved (up to ``max_retreats`` times), then a cold
    start is tried before giving up with status ``solver_failed``.

    Raises:
        LearningError: the solve at ``theta0`` fails.
        ValueError: ``expert`` does not match the game's shape.
    """
    expected = (spec.horizon, spec.num_robots, spec.state_dim)
    if np.shape(expert.states) != expected:
        raise ValueError(f"expert states {np.shape(expert.states)} do not match the game {expected}")
    trace = LearningTrace()
    t0 = time.perf_counter()
    try:
        result = solve_mcp(spec, theta0, options.solver)
    except InfeasibleGeometryError as exc:
        raise LearningError(str(exc)) from exc
    if not result.converged:
        raise LearningError(f"game solve at the initial parameters ended with status {result.status}")

    theta = theta0
    adam = AdamState.zeros(
        theta.learnable_vector().size,
        learning_rate=options.rates_for(theta),
        beta1=options.beta1,
        beta2=options.beta2,
        epsilon_hat=options.epsilon_hat,
    )
    retreats = 0
    iteration = 0
    while True:
        iteration += 1
        loss = trajectory_loss(result.trajectory, expert, options.positions_only)
        sens = solution_sensitivity(spec, theta, result, residual_tol=max(options.solver.residual_tol, 1e-6))
        grad = loss_gradient(result, sens, expert, options.positions_only)
        gnorm = float(np.linalg.norm(grad))
        trace.entries.append(TraceEntry(iteration, theta, loss, gnorm, result.status, time.perf_counter() - t0, retreats))
        log.debug("iteration %d: loss %.6g, |grad| %.3e, theta %s", iteration, loss, gnorm, theta.learnable_vector())
        if gnorm < options.tolerance:
            trace.status = CONVERGED
            break
        if iteration > options.max_iterations:
            trace.status = BUDGET_EXHAUSTED
            break
        adam, delta = adam_step(adam, grad)
        adam.learning_rate = adam.learning_rate * options.learning_rate_decay
        vec = theta.learnable_vector()
        candidate, new_result, retreats = None, None, 0
        for retreats in range(options.max_retreats + 1):
            candidate = theta.with_learnable_vector(vec - delta / 2**retreats)
            new_result = _try_solve(spec, candidate, options.solver, result)
            if new_result is not None:
                break
        if new_result is None:
            candidate = theta.with_learnable_vector(vec - delta / 2**options.max_retreats)
            new_result = _try_solve(spec, candidate, options.solver, None)
        if new_result is None:
            log.warning("solve failed after update %d; keeping the last solvable parameters", iteration)
            trace.status = SOLVER_FAILED
            break
        theta, result = candidate, new_result
    trace.final_solve = result
    return theta, trace
