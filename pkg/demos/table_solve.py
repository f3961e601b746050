"""Solve the two-robot crossing game and print how the keep-out constraint shapes it.

    python demos/table_solve.py
"""

import numpy as np

from hypergames import feasibility_report, solve_mcp
from hypergames.scenarios import table_scenario, truth_theta
from hypergames.solver import best_response_check


def main():
    spec = table_scenario()
    theta = truth_theta(spec)
    result = solve_mcp(spec, theta)
    report = feasibility_report(spec, theta, result.trajectory)
    print(f"status {result.status} after {result.iterations} Newton iterations, residual {result.final_residual:.1e}")
    print(f"closest approach {report.min_distance:.2f} m (keep-out radius {theta.rho[0]:.0f} m)")

    v = result.solution.v[0]  # (pairs, steps)
    active = np.flatnonzero(v > 1e-6) + 2
    print(f"hyperplane active at steps {active.min()}..{active.max()}" if active.size else "hyperplane never active")

    for i in range(spec.num_robots):
        br = best_response_check(spec, theta, result, i)
        print(f"robot {i}: cost {br.equilibrium_cost:.2f}, best unilateral deviation gains {br.improvement:.1e}")


if __name__ == "__main__":
    main()
