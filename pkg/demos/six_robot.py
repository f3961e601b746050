"""Learn on two robots, then reuse the parameters for six robots swapping places on a circle.

    python demos/six_robot.py
"""

from hypergames import learn_parameters, solve_mcp
from hypergames.config import load_bundled
from hypergames.experiments import multi_robot_generalization
from hypergames.scenarios import guess_theta, table_scenario, truth_theta


def main():
    spec = table_scenario()
    expert = solve_mcp(spec, truth_theta(spec)).trajectory
    theta, _ = learn_parameters(spec, guess_theta(spec), expert)
    print(f"learned on two robots: omega {theta.omega[0]:.5f} rad/s, rho {theta.rho[0]:.2f} m")

    six = load_bundled("six_robot.json").build_spec()
    gen = multi_robot_generalization(theta, six)
    rep = gen.report
    print(f"six robots, {six.num_pairs} pairs: {gen.status} in {gen.result.iterations} iterations")
    print(f"closest approach {rep.min_distance:.2f} m, worst hyperplane margin {rep.min_hyperplane.min():.2e} m")
    print("collision-free" if gen.success else "NOT collision-free")


if __name__ == "__main__":
    main()
