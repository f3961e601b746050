"""Lift the planar equilibrium to 3D by adding independently optimised cross-track motion.

The cross-track axis decouples from the in-plane motion, so each robot's
out-of-plane manoeuvre is a small constrained QP stacked onto the planar game.

    python demos/embed_3d.py
"""

import numpy as np

from hypergames import solve_mcp
from hypergames.experiments import OutOfPlaneProfile, embed_3d, spatial_spec
from hypergames.game import dynamics_residual
from hypergames.hcw import OrbitConstants
from hypergames.scenarios import table_scenario, truth_theta


def main():
    spec = table_scenario()
    planar = solve_mcp(spec, truth_theta(spec)).trajectory
    profile = OutOfPlaneProfile(z0=np.array([10.0, -5.0]), vz0=np.zeros(2), z_goal=np.array([-10.0, 15.0]))
    traj = embed_3d(planar, profile, OrbitConstants())

    for i in range(spec.num_robots):
        z = traj.states[:, i, 2]
        print(f"robot {i}: z {z[0]:+.1f} -> {z[-1]:+.2f} m, peak |uz| {np.abs(traj.controls[:, i, 2]).max():.3f} N")
    print(f"3D dynamics residual {dynamics_residual(spatial_spec(spec, OrbitConstants(), profile), traj):.1e}")


if __name__ == "__main__":
    main()
