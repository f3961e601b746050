"""Stacked first-order equilibrium conditions as a square nonlinear system.

The unknown is ``z = [x, u, w, v, lam_hi, lam_lo]`` with ``x`` the states at
``t = 2..T`` (``x_1`` is data), ``u`` the controls at ``t = 1..T-1``, ``w`` the
dynamics multipliers, ``v`` the hyperplane multipliers and ``lam_*`` the thrust
bound multipliers. Each robot's Lagrangian is

    L_i = J_i - w_i.G_i - v_i.H_i - lam_hi_i.(u_max + u_i) - lam_lo_i.(u_max - u_i)

and the residual ``F(z; theta)`` stacks the stationarity rows, the dynamics
rows and Fischer-Burmeister rows ``phi(a, b) = a + b - sqrt(a^2 + b^2)`` for
each complementarity pair. All blocks are time-major: ``x`` is laid out as
``(T-1, N, state_dim)`` and ``v`` as ``(num_multiplier_rows, T-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from hypergames.game import GameSpec, ThetaParams, Trajectory, hyperplane_normals

FB_EPSILON = 1e-10


def fischer_burmeister(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return a + b - np.hypot(a, b)


def fischer_burmeister_grad(a, b, eps: float = FB_EPSILON, degenerate_only: bool = False):
    """Partial derivatives of the FB function, smoothed by ``eps`` inside the root.

    With ``degenerate_only`` the smoothing is applied only where both
    arguments are below ``sqrt(eps)``; elsewhere the exact partials are used.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r2 = a**2 + b**2
    if degenerate_only:
        cut = np.sqrt(eps)
        r2 = np.where((np.abs(a) <= cut) & (np.abs(b) <= cut), r2 + eps, r2)
    else:
        r2 = r2 + eps
    r = np.sqrt(r2)
    return 1.0 - a / r, 1.0 - b / r


@dataclass(frozen=True)
class Layout:
    """Offsets of every block of ``z`` (and of ``F``, which mirrors it)."""

    num_robots: int
    horizon: int
    state_dim: int
    control_dim: int
    num_pairs: int
    shared: bool = True

    @property
    def steps(self) -> int:
        return self.horizon - 1

    @property
    def multiplier_rows(self) -> int:
        return self.num_pairs if self.shared else 2 * self.num_pairs

    @property
    def sizes(self) -> dict:
        nx = self.steps * self.num_robots * self.state_dim
        nu = self.steps * self.num_robots * self.control_dim
        return {
            "x": nx,
            "u": nu,
            "w": nx,
            "v": self.multiplier_rows * self.steps,
            "lam_hi": nu,
            "lam_lo": nu,
        }

    @property
    def slices(self) -> dict:
        out, start = {}, 0
        for name, n in self.sizes.items():
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def size(self) -> int:
        return sum(self.sizes.values())

    def shapes(self) -> dict:
        s, N = self.steps, self.num_robots
        return {
            "x": (s, N, self.state_dim),
            "u": (s, N, self.control_dim),
            "w": (s, N, self.state_dim),
            "v": (self.multiplier_rows, s),
            "lam_hi": (s, N, self.control_dim),
            "lam_lo": (s, N, self.control_dim),
        }

    def unpack(self, z) -> "SolutionVector":
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"z has shape {z.shape}, layout expects ({self.size},)")
        shapes = self.shapes()
        return SolutionVector(**{k: z[sl].reshape(shapes[k]) for k, sl in self.slices.items()})

    def pack(self, sol: "SolutionVector") -> np.ndarray:
        shapes = self.shapes()
        parts = []
        for k in self.sizes:
            arr = np.asarray(getattr(sol, k), dtype=float)
            if arr.shape != shapes[k]:
                raise ValueError(f"block {k} has shape {arr.shape}, expected {shapes[k]}")
            parts.append(arr.reshape(-1))
        return np.concatenate(parts)


def index_map(spec: GameSpec) -> Layout:
    return Layout(spec.num_robots, spec.horizon, spec.state_dim, spec.control_dim, spec.num_pairs, spec.shared_multipliers)


@dataclass
class SolutionVector:
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    v: np.ndarray
    lam_hi: np.ndarray
    lam_lo: np.ndarray

    def trajectory(self, spec: GameSpec) -> Trajectory:
        states = np.concatenate([spec.initial_state[None], self.x], axis=0)
        return Trajectory(states, self.u)


class KKTSystem:
    """Residual and Jacobians of the equilibrium conditions for fixed ``(spec, theta)``.

    The parts of the Jacobian that do not depend on ``z`` are assembled once
    here; FB rows are rescaled per evaluation.
    """

    def __init__(self, spec: GameSpec, theta: ThetaParams, fb_epsilon: float = FB_EPSILON, degenerate_only: bool = False):
        if theta.num_pairs != spec.num_pairs:
            raise ValueError(f"theta has {theta.num_pairs} pairs, game has {spec.num_pairs}")
        if theta.xi.size != spec.num_robots:
            raise ValueError(f"theta has {theta.xi.size} control weights, game has {spec.num_robots} robots")
        self.spec = spec
        self.theta = theta
        self.fb_epsilon = fb_epsilon
        self.degenerate_only = degenerate_only
        self.layout = index_map(spec)
        self._build()

    # -- assembly --------------------------------------------------------

    def _build(self):
        spec, theta, lay = self.spec, self.theta, self.layout
        S, N, nx, nu, P = lay.steps, spec.num_robots, spec.state_dim, spec.control_dim, spec.num_pairs
        npos = spec.position_dim
        A, B = spec.dynamics.A, spec.dynamics.B
        dim_x = S * N * nx

        I_SN = sp.identity(S * N, format="csr")
        shift = sp.diags(np.ones(S - 1), -1, shape=(S, S), format="csr")
        self.Gx = (sp.identity(dim_x, format="csr") - sp.kron(sp.kron(shift, sp.identity(N)), A)).tocsr()
        self.Gu = (-sp.kron(I_SN, B)).tocsr()
        g0 = np.zeros((S, N, nx))
        g0[0] = spec.initial_state @ A.T
        self.g0 = g0.reshape(-1)

        # terminal cost on positions of x_T
        q = np.zeros((S, N, nx))
        q[-1, :, :npos] = 1.0
        self.Qx = sp.diags(2.0 * q.reshape(-1), format="csr")
        qx = np.zeros((S, N, nx))
        qx[-1, :, :npos] = 2.0 * spec.goals
        self.qx = qx.reshape(-1)
        self.Ru = sp.diags(np.repeat(2.0 * np.tile(theta.xi, S), nu), format="csr")

        # hyperplane rows: H[p, a] = n[p, a] . (p_i - p_j) at x-index a - rho[p]
        n = hyperplane_normals(spec.alphas, theta.omega, spec.horizon) if P else np.zeros((0, S, 2))
        n_perp = np.stack([-n[..., 1], n[..., 0]], axis=-1) * np.arange(1, S + 1)[None, :, None]
        self.normals = n

        def pair_matrix(values, sides):
            rows, cols, vals = [], [], []
            for p, (i, j) in enumerate(spec.pairs):
                for robot, sign in ((i, 1.0), (j, -1.0)):
                    if robot not in sides(p):
                        continue
                    for c in range(2):
                        a = np.arange(S)
                        rows.append(p * S + a)
                        cols.append((a * N + robot) * nx + c)
                        vals.append(sign * values[p, :, c])
            if not rows:
                return sp.csr_matrix((P * S, dim_x))
            return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(P * S, dim_x))

        both = lambda p: spec.pairs[p]  # noqa: E731
        first = lambda p: (spec.pairs[p][0],)  # noqa: E731
        second = lambda p: (spec.pairs[p][1],)  # noqa: E731
        Hx = pair_matrix(n, both)
        dHx = pair_matrix(n_perp, both)
        pair_of_row = np.repeat(np.arange(P), S)
        if lay.shared:
            self.Cx, self.dCx = Hx, dHx
            self.Hrep, self.dHrep = Hx, dHx
            row_pair = pair_of_row
        else:
            self.Cx = sp.vstack([pair_matrix(n, first), pair_matrix(n, second)]).tocsr()
            self.dCx = sp.vstack([pair_matrix(n_perp, first), pair_matrix(n_perp, second)]).tocsr()
            self.Hrep = sp.vstack([Hx, Hx]).tocsr()
            self.dHrep = sp.vstack([dHx, dHx]).tocsr()
            row_pair = np.concatenate([pair_of_row, pair_of_row])
        self.row_pair = row_pair
        self.rho_rows = theta.rho[row_pair] if P else np.zeros(0)
        n_rows = row_pair.size
        self.group = sp.csr_matrix((np.ones(n_rows), (np.arange(n_rows), row_pair)), shape=(n_rows, P))

    # -- residual --------------------------------------------------------

    def split(self, z):
        sl = self.layout.slices
        return {k: z[s] for k, s in sl.items()}

    def hyperplane_rows(self, x) -> np.ndarray:
        return self.Hrep @ x - self.rho_rows

    def residual(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        b = self.split(z)
        umax = self.spec.thrust_limit
        x, u, w, v, lh, ll = b["x"], b["u"], b["w"], b["v"], b["lam_hi"], b["lam_lo"]
        stat_x = self.Qx @ x - self.qx - self.Gx.T @ w - self.Cx.T @ v
        stat_u = self.Ru @ u - self.Gu.T @ w - lh + ll
        G = self.Gx @ x + self.Gu @ u - self.g0
        fb_h = fischer_burmeister(self.hyperplane_rows(x), v)
        fb_hi = fischer_burmeister(umax + u, lh)
        fb_lo = fischer_burmeister(umax - u, ll)
        return np.concatenate([stat_x, stat_u, G, fb_h, fb_hi, fb_lo])

    def blocks(self, z) -> dict:
        """Named residual blocks, each reshaped like its variable."""
        F = self.residual(z)
        shapes = self.layout.shapes()
        names = {"x": "stationarity_x", "u": "stationarity_u", "w": "dynamics", "v": "fb_hyperplane", "lam_hi": "fb_thrust_hi", "lam_lo": "fb_thrust_lo"}
        return {names[k]: F[s].reshape(shapes[k]) for k, s in self.layout.slices.items()}

    # -- jacobians -------------------------------------------------------

    def _fb_partials(self, z, eps=None):
        b = self.split(z)
        umax = self.spec.thrust_limit
        eps = self.fb_epsilon if eps is None else eps
        h = self.hyperplane_rows(b["x"])
        deg = self.degenerate_only
        dh_a, dh_b = fischer_burmeister_grad(h, b["v"], eps, deg)
        dhi_a, dhi_b = fischer_burmeister_grad(umax + b["u"], b["lam_hi"], eps, deg)
        dlo_a, dlo_b = fischer_burmeister_grad(umax - b["u"], b["lam_lo"], eps, deg)
        return (dh_a, dh_b), (dhi_a, dhi_b), (dlo_a, dlo_b)

    def jacobian(self, z, smoothing: float | None = None) -> sp.csc_matrix:
        """Sparse ``dF/dz``; ``smoothing`` overrides the FB smoothing term."""
        z = np.asarray(z, dtype=float)
        (dh_a, dh_b), (dhi_a, dhi_b), (dlo_a, dlo_b) = self._fb_partials(z, smoothing)
        nu = self.layout.sizes["u"]
        Iu = sp.identity(nu, format="csr")
        D = sp.diags
        rows = [
            [self.Qx, None, -self.Gx.T, -self.Cx.T, None, None],
            [None, self.Ru, -self.Gu.T, None, -Iu, Iu],
            [self.Gx, self.Gu, None, None, None, None],
            [D(dh_a) @ self.Hrep, None, None, D(dh_b), None, None],
            [None, D(dhi_a), None, None, D(dhi_b), None],
            [None, D(-dlo_a), None, None, None, D(dlo_b)],
        ]
        sizes = list(self.layout.sizes.values())
        # bmat needs explicit shapes for empty multiplier blocks
        for r in range(6):
            for c in range(6):
                if rows[r][c] is None and (sizes[r] == 0 or sizes[c] == 0):
                    rows[r][c] = sp.csr_matrix((sizes[r], sizes[c]))
        return sp.bmat(rows, format="csc")

    def theta_jacobian_full(self, z) -> np.ndarray:
        """``dF/d(omega, log rho, xi)`` for every pair and robot, dense."""
        z = np.asarray(z, dtype=float)
        lay, spec = self.layout, self.spec
        P, N = spec.num_pairs, spec.num_robots
        b = self.split(z)
        sl = lay.slices
        out = np.zeros((lay.size, 2 * P + N))
        if P:
            (dh_a, _), _, _ = self._fb_partials(z)
            v = b["v"]
            # stationarity_x: -(dC/domega)^T v, grouped per pair
            out[sl["x"], :P] = -(self.dCx.T @ (sp.diags(v) @ self.group)).toarray()
            dH = self.dHrep @ b["x"]
            out[sl["v"], :P] = (sp.diags(dh_a * dH) @ self.group).toarray()
            out[sl["v"], P : 2 * P] = (sp.diags(-dh_a * self.rho_rows) @ self.group).toarray()
        u = b["u"].reshape(lay.steps, N, spec.control_dim)
        stat_u = np.zeros((lay.steps, N, spec.control_dim, N))
        for i in range(N):
            stat_u[:, i, :, i] = 2.0 * u[:, i, :]
        out[sl["u"], 2 * P :] = stat_u.reshape(-1, N)
        return out

    def theta_jacobian(self, z) -> np.ndarray:
        """``dF/dtheta`` restricted to the learnable coordinates of ``theta``."""
        return self.theta_jacobian_full(z) @ self.theta.selection()


def kkt_residual(spec: GameSpec, theta: ThetaParams, z) -> np.ndarray:
    return KKTSystem(spec, theta).residual(z)


def kkt_jacobian(spec: GameSpec, theta: ThetaParams, z):
    """``(dF/dz, dF/dtheta)``; the first sparse, the second dense over learnable entries."""
    system = KKTSystem(spec, theta)
    return system.jacobian(z), system.theta_jacobian(z)


def lagrangian_gradient(spec: GameSpec, theta: ThetaParams, z, robot: int) -> tuple[np.ndarray, np.ndarray]:
    """Stationarity rows ``(grad_x L_i, grad_u L_i)`` of one robot, shaped ``(T-1, dim)``."""
    blocks = KKTSystem(spec, theta).blocks(z)
    return blocks["stationarity_x"][:, robot], blocks["stationarity_u"][:, robot]
