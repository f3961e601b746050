"""Semismooth Newton solution of the equilibrium conditions.

The complementarity rows use the Fischer-Burmeister function, so the whole
system is a square semismooth equation ``F(z) = 0``. Newton steps come from a
sparse LU factorization of the generalized Jacobian; globalization is an
Armijo backtracking search on the merit ``0.5 * ||F||^2`` with a steepest
descent fallback.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from hypergames.game import (
    GameSpec,
    ThetaParams,
    Trajectory,
    check_initial_separation,
    hyperplane_normals,
    hyperplane_values,
    objective_value,
)
from hypergames.kkt import (
    FB_EPSILON,
    KKTSystem,
    Layout,
    SolutionVector,
    fischer_burmeister,
    fischer_burmeister_grad,
    index_map,
)

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
DIVERGED = "diverged"
SINGULAR = "singular"
STALLED = "stalled"


@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 200
    residual_tol: float = 1e-9
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-10
    regularization: float = 1e-8
    max_regularization: float = 1e-2
    divergence_cap: float = 1e12
    fb_epsilon: float = 1e-30  # floor of the Jacobian smoothing
    jacobian_smoothing: float = 1.0
    # factors retried from the same start when the first attempt fails
    smoothing_fallbacks: tuple = (1e-2,)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        for name in ("residual_tol", "min_step", "regularization", "max_regularization", "divergence_cap", "armijo"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        object.__setattr__(self, "smoothing_fallbacks", tuple(float(f) for f in self.smoothing_fallbacks))


@dataclass
class NewtonResult:
    z: np.ndarray
    status: str
    iterations: int
    final_residual: float
    history: list = field(default_factory=list)  # (iteration, residual, step)
    merits: list = field(default_factory=list)  # 0.5 ||F||^2 per accepted iterate

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


@dataclass
class SolveResult(NewtonResult):
    layout: Layout = None
    spec: GameSpec = None
    theta: ThetaParams = None
    smoothing: float = 1.0  # Jacobian smoothing factor of the returned attempt
    attempts: int = 1

    @property
    def solution(self) -> SolutionVector:
        return self.layout.unpack(self.z)

    @property
    def trajectory(self) -> Trajectory:
        return self.solution.trajectory(self.spec)

    def write_log(self, path) -> None:
        """Iteration log as CSV: ``iteration,residual,step``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "residual", "step"])
            writer.writerows(self.history)


def _factorize(J: sp.csc_matrix, options: SolveOptions):
    """LU of ``J``; on failure retry with ``J + delta I``, ``delta`` growing tenfold."""
    delta = 0.0
    eye = sp.identity(J.shape[0], format="csc")
    while True:
        try:
            lu = spla.splu(J + delta * eye if delta else J)
            diag = np.abs(lu.U.diagonal())
            if np.all(np.isfinite(diag)) and diag.min() > 1e-14 * max(diag.max(), 1.0):
                return lu
        except RuntimeError:
            pass
        delta = options.regularization if delta == 0.0 else delta * 10.0
        if delta > options.max_regularization * (1 + 1e-12):
            return None


def semismooth_newton(fun, jac, z0, options: SolveOptions = SolveOptions()) -> NewtonResult:
    """Drive ``fun(z) = 0`` with a globalized Newton method.

    Args:
        fun: residual callable returning a 1-D array.
        jac: callable ``jac(z, smoothing)`` returning a sparse Jacobian element;
            ``smoothing`` is the FB smoothing term placed under the square root.
        z0: starting point.
        options: tolerances and line-search constants.

    The smoothing shrinks with the residual, ``max(fb_epsilon, (k * ||F||)^2)``,
    so directions are well defined at degenerate complementarity pairs while
    the line search always measures the exact FB residual.
    """
    z = np.array(z0, dtype=float)
    F = fun(z)
    merit = 0.5 * F @ F
    res = float(np.max(np.abs(F), initial=0.0))
    history = [(0, res, 0.0)]
    merits = [merit]
    best_res, best_z = res, z.copy()
    if not np.isfinite(res):
        return NewtonResult(z, DIVERGED, 0, res, history, merits)
    it = 0
    while res > options.residual_tol:
        if it == options.max_iterations:
            return NewtonResult(best_z, MAX_ITERATIONS, it, best_res, history, merits)
        it += 1
        smoothing = max(options.fb_epsilon, (options.jacobian_smoothing * res) ** 2)
        J = sp.csc_matrix(jac(z, smoothing))
        lu = _factorize(J, options)
        if lu is None:
            return NewtonResult(best_z, SINGULAR, it - 1, best_res, history, merits)
        grad = J.T @ F
        d = lu.solve(-F)
        accepted = None
        if np.all(np.isfinite(d)) and grad @ d < 0:
            accepted = _line_search(fun, z, d, merit, grad @ d, options)
        if accepted is None:
            accepted = _line_search(fun, z, -grad, merit, -(grad @ grad), options)
        if accepted is None:
            return NewtonResult(best_z, STALLED, it, best_res, history, merits)
        step, z, F, merit = accepted
        res = float(np.max(np.abs(F)))
        history.append((it, res, step))
        merits.append(merit)
        if res < best_res:
            best_res, best_z = res, z.copy()
        if not np.isfinite(merit) or merit > options.divergence_cap:
            return NewtonResult(best_z, DIVERGED, it, best_res, history, merits)
    return NewtonResult(z, CONVERGED, it, res, history, merits)


def _line_search(fun, z, d, merit, slope, options):
    """Armijo backtracking; returns ``(step, z, F, merit)`` or ``None``."""
    step = 1.0
    while step >= options.min_step:
        z_new = z + step * d
        F_new = fun(z_new)
        m_new = 0.5 * F_new @ F_new
        if np.isfinite(m_new) and m_new < merit and m_new <= merit + options.armijo * step * slope:
            return step, z_new, F_new, m_new
        step *= options.backtrack
    return None


# -- game-specific driver ------------------------------------------------


def initial_guess(spec: GameSpec, theta: ThetaParams | None = None) -> np.ndarray:
    """Straight-line states to the goals, least-squares controls, small positive duals.

    Controls are clipped to the thrust box; the dynamics rows are left for
    Newton to close.
    """
    lay = index_map(spec)
    T, N, npos = spec.horizon, spec.num_robots, spec.position_dim
    frac = np.linspace(0.0, 1.0, T)[:, None, None]
    p0 = spec.initial_state[:, :npos]
    pos = p0[None] + frac * (spec.goals - p0)[None]
    vel = np.empty_like(pos)
    vel[:-1] = np.diff(pos, axis=0) / spec.dt
    vel[-1] = vel[-2] if T > 2 else vel[0]
    states = np.concatenate([pos, vel], axis=-1)
    states[0] = spec.initial_state
    A, B = spec.dynamics.A, spec.dynamics.B
    rhs = states[1:] - states[:-1] @ A.T  # (T-1, N, nx)
    controls = np.linalg.lstsq(B, rhs.reshape(-1, spec.state_dim).T, rcond=None)[0].T
    controls = np.clip(controls, -spec.thrust_limit, spec.thrust_limit).reshape(T - 1, N, spec.control_dim)
    shapes = lay.shapes()
    sol = SolutionVector(
        x=states[1:],
        u=controls,
        w=np.zeros(shapes["w"]),
        v=np.full(shapes["v"], 1e-2),
        lam_hi=np.full(shapes["lam_hi"], 1e-2),
        lam_lo=np.full(shapes["lam_lo"], 1e-2),
    )
    return lay.pack(sol)


def solve_mcp(
    spec: GameSpec,
    theta: ThetaParams,
    options: SolveOptions = SolveOptions(),
    warm_start=None,
) -> SolveResult:
    """Find a local generalized Nash equilibrium of the game.

    If Newton fails with the default Jacobian smoothing, the solve is repeated
    from the same start with each factor in ``options.smoothing_fallbacks``.
    The first converged attempt is returned, otherwise the one with the
    smallest residual.

    Raises:
        InfeasibleGeometryError: a pair starts inside its keep-out zone.
    """
    check_initial_separation(spec, theta)
    system = KKTSystem(spec, theta)
    if warm_start is None:
        z0 = initial_guess(spec, theta)
    else:
        z0 = warm_start.z if isinstance(warm_start, NewtonResult) else np.asarray(warm_start, dtype=float)
        if z0.shape != (system.layout.size,):
            raise ValueError("warm start does not match the game layout")
    best, best_factor, attempts = None, None, 0
    for factor in (options.jacobian_smoothing, *options.smoothing_fallbacks):
        attempts += 1
        out = semismooth_newton(system.residual, system.jacobian, z0, replace(options, jacobian_smoothing=factor))
        log.debug("solve_mcp: %s after %d iterations, residual %.3e (smoothing %g)", out.status, out.iterations, out.final_residual, factor)
        if best is None or out.converged or out.final_residual < best.final_residual:
            best, best_factor = out, factor
        if out.converged:
            break
    return SolveResult(
        best.z, best.status, best.iterations, best.final_residual, best.history, best.merits,
        layout=system.layout, spec=spec, theta=theta, smoothing=best_factor, attempts=attempts,
    )


# -- convex QPs with linear constraints ---------------------------------


def solve_linear_qp(Q, q, E, e, C, d, options: SolveOptions = SolveOptions(), y0=None) -> NewtonResult:
    """Minimize ``0.5 y'Qy + q'y`` subject to ``E y = e`` and ``C y >= d``.

    The KKT conditions ``Qy + q - E'w - C'mu = 0``, ``Ey = e`` and
    ``0 <= Cy - d  _|_  mu >= 0`` are solved with the same Newton driver.
    Returns a result whose ``z`` is ``[y, w, mu]``.
    """
    Q, E, C = (sp.csr_matrix(M) for M in (Q, E, C))
    n, m, k = Q.shape[0], E.shape[0], C.shape[0]

    def fun(z):
        y, w, mu = z[:n], z[n : n + m], z[n + m :]
        return np.concatenate([Q @ y + q - E.T @ w - C.T @ mu, E @ y - e, fischer_burmeister(C @ y - d, mu)])

    def jac(z, smoothing=FB_EPSILON):
        y, mu = z[:n], z[n + m :]
        da, db = fischer_burmeister_grad(C @ y - d, mu, smoothing)
        blocks = [
            [Q, -E.T, -C.T],
            [E, sp.csr_matrix((m, m)), sp.csr_matrix((m, k))],
            [sp.diags(da) @ C, sp.csr_matrix((k, m)), sp.diags(db)],
        ]
        return sp.bmat(blocks, format="csc")

    z0 = np.concatenate([np.zeros(n) if y0 is None else y0, np.zeros(m), np.full(k, 1e-2)])
    return semismooth_newton(fun, jac, z0, options)


@dataclass(frozen=True)
class BestResponse:
    improvement: float  # J_i(equilibrium) - J_i(best response); nan if inconclusive
    equilibrium_cost: float
    best_cost: float
    status: str

    @property
    def conclusive(self) -> bool:
        return self.status == CONVERGED


def _single_robot_qp(spec: GameSpec, theta: ThetaParams, traj: Trajectory, robot: int):
    """QP data for robot ``robot`` with every other trajectory frozen.

    Decision vector is ``[x_2..x_T, u_1..u_{T-1}]`` of that robot only.
    """
    S, nx, nu, npos = spec.horizon - 1, spec.state_dim, spec.control_dim, spec.position_dim
    A, B = spec.dynamics.A, spec.dynamics.B
    n = S * (nx + nu)
    ox = lambda a: a * nx  # noqa: E731
    ou = lambda a: S * nx + a * nu  # noqa: E731
    Q = sp.lil_matrix((n, n))
    q = np.zeros(n)
    for c in range(npos):
        Q[ox(S - 1) + c, ox(S - 1) + c] = 2.0
        q[ox(S - 1) + c] = -2.0 * spec.goals[robot, c]
    for a in range(S):
        for c in range(nu):
            Q[ou(a) + c, ou(a) + c] = 2.0 * theta.xi[robot]
    E = sp.lil_matrix((S * nx, n))
    e = np.zeros(S * nx)
    for a in range(S):
        rows = slice(a * nx, (a + 1) * nx)
        E[rows, ox(a) : ox(a) + nx] = np.eye(nx)
        E[rows, ou(a) : ou(a) + nu] = -B
        if a == 0:
            e[rows] = A @ spec.initial_state[robot]
        else:
            E[rows, ox(a - 1) : ox(a - 1) + nx] = -A
    C_rows, d = [], []
    n_all = np.zeros((0, S, 2))
    if spec.num_pairs:
        n_all = hyperplane_normals(spec.alphas, theta.omega, spec.horizon)
    for k in spec.pairs_of(robot):
        i, j = spec.pairs[k]
        other = j if robot == i else i
        sign = 1.0 if robot == i else -1.0
        for a in range(S):
            row = np.zeros(n)
            row[ox(a) : ox(a) + 2] = sign * n_all[k, a]
            # n.(p_i - p_j) - rho >= 0 with the opponent position moved to the right side
            C_rows.append(row)
            d.append(theta.rho[k] + sign * n_all[k, a] @ traj.states[a + 1, other, :2])
    for a in range(S):
        for c in range(nu):
            row = np.zeros(n)
            row[ou(a) + c] = 1.0
            C_rows.append(row)
            d.append(-spec.thrust_limit)
            C_rows.append(-row)
            d.append(-spec.thrust_limit)
    C = sp.csr_matrix(np.array(C_rows))
    return Q.tocsr(), q, E.tocsr(), e, C, np.array(d)


def best_response_check(
    spec: GameSpec,
    theta: ThetaParams,
    z_star,
    robot: int,
    options: SolveOptions = SolveOptions(max_iterations=100),
) -> BestResponse:
    """Cost reduction robot ``robot`` could obtain by deviating alone.

    A local equilibrium gives an improvement near zero; a clearly positive
    value means the robot has a profitable unilateral deviation.
    """
    z = z_star.z if isinstance(z_star, NewtonResult) else np.asarray(z_star, dtype=float)
    traj = index_map(spec).unpack(z).trajectory(spec)
    j_eq = objective_value(spec, theta, traj, robot)
    Q, q, E, e, C, d = _single_robot_qp(spec, theta, traj, robot)
    S = spec.horizon - 1
    y0 = np.concatenate([traj.states[1:, robot].reshape(-1), traj.controls[:, robot].reshape(-1)])
    out = solve_linear_qp(Q, q, E, e, C, d, options, y0=y0)
    if not out.converged:
        return BestResponse(float("nan"), j_eq, float("nan"), out.status)
    y = out.z[: Q.shape[0]]
    states = np.concatenate([spec.initial_state[robot][None], y[: S * spec.state_dim].reshape(S, -1)])
    controls = y[S * spec.state_dim :].reshape(S, -1)
    br = traj.states.copy(), traj.controls.copy()
    br[0][:, robot] = states
    br[1][:, robot] = controls
    j_br = objective_value(spec, theta, Trajectory(*br), robot)
    return BestResponse(j_eq - j_br, j_eq, j_br, out.status)


def certificate(spec: GameSpec, theta: ThetaParams, result: SolveResult) -> dict:
    """Complementarity facts implied by a small residual, checked directly."""
    sol = result.solution
    traj = sol.trajectory(spec)
    H = hyperplane_values(spec, theta, traj.states)
    v = sol.v if spec.shared_multipliers else sol.v.reshape(2, spec.num_pairs, -1).min(axis=0)
    return {
        "min_hyperplane": float(H.min(initial=np.inf)),
        "min_multiplier": float(v.min(initial=np.inf)),
        "max_product": float(np.max(np.abs(H * v), initial=0.0)),
    }
