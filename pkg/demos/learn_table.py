"""Recover the hyperplane rotation rate and keep-out radius from a clean demonstration.

Starts from the deliberately poor guess (0.008 rad/s, 10 m) and prints the trace.

    python demos/learn_table.py
"""

from hypergames import learn_parameters, solve_mcp
from hypergames.experiments import reconstruction_error
from hypergames.scenarios import guess_theta, table_scenario, truth_theta


def main():
    spec = table_scenario()
    truth = truth_theta(spec)
    expert = solve_mcp(spec, truth).trajectory

    theta, trace = learn_parameters(spec, guess_theta(spec), expert)
    shown = trace.entries[::5]
    if shown[-1] is not trace.entries[-1]:
        shown.append(trace.entries[-1])
    for e in shown:
        print(f"iter {e.iteration:2d}  omega {e.theta.omega[0]:.5f}  rho {e.theta.rho[0]:6.2f}  loss {e.loss:10.3f}")
    D = reconstruction_error(spec, truth, theta, truth_trajectory=expert)
    print(f"{trace.status}: omega {theta.omega[0]:.5f} rad/s, rho {theta.rho[0]:.2f} m, D = {D:.4f} m^2")


if __name__ == "__main__":
    main()
