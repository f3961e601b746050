"""Derivatives of the equilibrium with respect to the game parameters.

At a solution ``F(z*; theta) = 0`` the implicit function theorem gives
``dz*/dtheta = -(dF/dz)^{-1} dF/dtheta``. Before differentiating, multipliers
of clearly inactive constraints (slack above ``sqrt(eps)``, multiplier within
the solve tolerance of zero) are set to zero. FB rows use exact partials,
smoothed by ``eps`` only where both arguments are near zero, so weakly active
pairs still give a usable derivative and inactive ones contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from hypergames.game import GameSpec, ThetaParams, Trajectory
from hypergames.kkt import FB_EPSILON, KKTSystem, Layout

DIRECT = "direct"
LEAST_SQUARES = "least_squares"

PIVOT_THRESHOLD = 1e-12  # relative to the largest pivot


class NotConvergedError(ValueError):
    """Raised when a sensitivity is requested at a point that does not solve the game."""


@dataclass
class SensitivityResult:
    dz_dtheta: np.ndarray  # (dim z, learnable), internal units
    conditioning: float  # smallest |pivot| of the LU factors
    method: str
    layout: Layout
    theta: ThetaParams
    consistency: float = np.nan  # ||J dz + dF/dtheta||_inf

    def state_rows(self) -> np.ndarray:
        """Rows of ``dz/dtheta`` belonging to ``x_2..x_T``, shaped ``(T-1, N, nx, k)``."""
        lay = self.layout
        return self.dz_dtheta[lay.slices["x"]].reshape(lay.steps, lay.num_robots, lay.state_dim, -1)

    def natural_units(self) -> np.ndarray:
        """``dz/dtheta`` with keep-out columns per metre instead of per log-metre."""
        return self.dz_dtheta * natural_scale(self.theta)[None, :]


def natural_scale(theta: ThetaParams) -> np.ndarray:
    """Per-column factor ``d(internal)/d(natural)``: ``1/rho`` for radii, 1 otherwise."""
    S = theta.selection()
    P = theta.num_pairs
    scale = np.ones(S.shape[1])
    for c in range(S.shape[1]):
        rows = np.flatnonzero(S[:, c])
        if rows.size and P <= rows[0] < 2 * P:
            scale[c] = 1.0 / theta.rho[rows[0] - P]
    return scale


def solution_sensitivity(
    spec: GameSpec,
    theta: ThetaParams,
    z_star,
    residual_tol: float = 1e-6,
    fb_epsilon: float = FB_EPSILON,
) -> SensitivityResult:
    """``dz*/dtheta`` over the learnable entries of ``theta``.

    Raises:
        NotConvergedError: ``||F(z_star)||_inf`` exceeds ``residual_tol``.
    """
    z = getattr(z_star, "z", z_star)
    z = np.asarray(z, dtype=float)
    system = KKTSystem(spec, theta, fb_epsilon=fb_epsilon, degenerate_only=True)
    res = np.max(np.abs(system.residual(z)), initial=0.0)
    if not res <= residual_tol:
        raise NotConvergedError(f"residual {res:.3e} exceeds {residual_tol:.1e}; solve the game first")
    z = _drop_inactive_multipliers(system, z, np.sqrt(fb_epsilon), residual_tol)
    J = system.jacobian(z)
    rhs = -system.theta_jacobian(z)
    if rhs.shape[1] == 0:
        return SensitivityResult(np.zeros((z.size, 0)), np.inf, DIRECT, system.layout, theta, 0.0)

    pivot = 0.0
    try:
        lu = spla.splu(J.tocsc())
        diag = np.abs(lu.U.diagonal())
        pivot = float(diag.min())
        direct_ok = np.isfinite(pivot) and pivot > PIVOT_THRESHOLD * diag.max()
    except RuntimeError:
        direct_ok = False
    if direct_ok:
        dz = lu.solve(rhs)
        method = DIRECT
    else:
        dz = sla.lstsq(J.toarray(), rhs, lapack_driver="gelsd")[0]
        method = LEAST_SQUARES
    consistency = float(np.max(np.abs(J @ dz - rhs)))
    return SensitivityResult(dz, pivot, method, system.layout, theta, consistency)


def _drop_inactive_multipliers(system: KKTSystem, z, slack_cut: float, tol: float) -> np.ndarray:
    z = z.copy()
    sl = system.layout.slices
    b = system.split(z)
    umax = system.spec.thrust_limit
    slacks = {
        "v": system.hyperplane_rows(b["x"]),
        "lam_hi": umax + b["u"],
        "lam_lo": umax - b["u"],
    }
    for name, slack in slacks.items():
        block = z[sl[name]]
        block[(slack > slack_cut) & (np.abs(block) <= tol)] = 0.0
    return z


def trajectory_loss(traj: Trajectory, expert: Trajectory, positions_only: bool = False) -> float:
    """Squared state mismatch summed over every robot and time step."""
    if traj.states.shape != expert.states.shape:
        raise ValueError(f"expert states {expert.states.shape} do not match {traj.states.shape}")
    diff = traj.states - expert.states
    if positions_only:
        diff = diff[..., : diff.shape[-1] // 2]
    return float(np.sum(diff**2))


def loss_gradient(z_star, sens: SensitivityResult, expert: Trajectory, positions_only: bool = False) -> np.ndarray:
    """Gradient of :func:`trajectory_loss` over the learnable parameters (internal units).

    The first state is data, so only ``x_2..x_T`` carry sensitivity.
    """
    lay = sens.layout
    z = np.asarray(getattr(z_star, "z", z_star), dtype=float)
    expert_states = np.asarray(expert.states, dtype=float)
    if expert_states.shape != (lay.horizon, lay.num_robots, lay.state_dim):
        raise ValueError(f"expert states {expert_states.shape} do not match the game")
    x = z[lay.slices["x"]].reshape(lay.steps, lay.num_robots, lay.state_dim)
    resid = 2.0 * (x - expert_states[1:])
    if positions_only:
        resid[..., lay.state_dim // 2 :] = 0.0
    return resid.reshape(-1) @ sens.dz_dtheta[lay.slices["x"]]
