"""Command-line entry point: ``hypergames {solve,learn,experiment,export-continuous}``.

Exit codes: 0 success, 1 configuration or input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from hypergames import experiments as ex
from hypergames.config import ConfigError, ScenarioConfig, bundled_path
from hypergames.export import read_trajectory_csv, write_csv, write_json, write_trajectory_csv
from hypergames.game import InfeasibleGeometryError, feasibility_report
from hypergames.hcw import hcw_continuous, hcw_matrices, planar_dynamics
from hypergames.learning import LearningError, learn_parameters
from hypergames.solver import solve_mcp

log = logging.getLogger("hypergames")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


class SolverFailure(RuntimeError):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def manifest(cfg: ScenarioConfig, args: argparse.Namespace, extra: dict | None = None) -> dict:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    out = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {
            "package": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "platform": platform.platform(),
    }
    out.update(extra or {})
    return out


def _load(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_solve(args) -> int:
    cfg = _load(args)
    spec = cfg.build_spec()
    theta = cfg.guess() if args.theta == "guess" else cfg.truth()
    out = Path(args.output)
    try:
        result = solve_mcp(spec, theta, cfg.solver)
    except InfeasibleGeometryError as exc:
        write_json(out / "manifest.json", manifest(cfg, args, {"status": "infeasible_geometry", "message": str(exc)}))
        raise SolverFailure(f"infeasible geometry: {exc}") from exc
    report = feasibility_report(spec, theta, result.trajectory)
    write_trajectory_csv(out / "trajectory.csv", result.trajectory, spec.dt)
    result.write_log(out / "solver_log.csv")
    payload = {"status": result.status, "iterations": result.iterations, "final_residual": result.final_residual, **report.to_dict()}
    write_json(out / "feasibility.json", payload)
    write_json(out / "manifest.json", manifest(cfg, args, {"status": result.status}))
    if not result.converged or not report.is_feasible():
        raise SolverFailure(f"solve ended with status {result.status}, feasible={report.is_feasible()}")
    print(f"converged in {result.iterations} iterations, residual {result.final_residual:.2e}, min distance {report.min_distance:.3f} m")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _load(args)
    spec = cfg.build_spec()
    if args.expert:
        try:
            expert = read_trajectory_csv(args.expert, spec.state_dim)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read expert trajectory: {exc}") from exc
        if expert.states.shape != (spec.horizon, spec.num_robots, spec.state_dim):
            raise ConfigError(f"expert trajectory has shape {expert.states.shape}, scenario needs {(spec.horizon, spec.num_robots, spec.state_dim)}")
    else:
        try:
            expert = ex.generate_expert(spec, cfg.truth(), cfg.solver)
        except (ex.ExperimentError, InfeasibleGeometryError) as exc:
            raise SolverFailure(str(exc)) from exc
    if args.noise_sigma:
        expert = ex.corrupt(expert, ex.NoiseModel(args.noise_sigma, cfg.seed, cfg.experiment.noise_target))
    try:
        theta, trace = learn_parameters(spec, cfg.guess(), expert, cfg.learner_options())
    except LearningError as exc:
        raise SolverFailure(str(exc)) from exc
    out = Path(args.output)
    write_csv(out / "learning_trace.csv", trace.rows())
    learned = {
        "omega": theta.omega,
        "rho": theta.rho,
        "xi": theta.xi,
        "status": trace.status,
        "iterations": trace.iterations - 1,
        "final_loss": trace.entries[-1].loss,
        "final_grad_norm": trace.entries[-1].grad_norm,
    }
    write_json(out / "theta.json", learned)
    write_trajectory_csv(out / "trajectory.csv", trace.final_solve.trajectory, spec.dt)
    write_json(out / "manifest.json", manifest(cfg, args, {"status": trace.status, "noise_sigma": args.noise_sigma}))
    print(f"{trace.status} after {trace.iterations - 1} updates: omega={theta.omega.tolist()} rho={theta.rho.tolist()}")
    return EXIT_OK if trace.status != "solver_failed" else EXIT_SOLVER


def _levels(args, cfg):
    if args.levels:
        return tuple(float(s) for s in args.levels.split(","))
    if args.full_paper_scale:
        return ex.FULL_LEVELS
    return cfg.experiment.noise_levels


def cmd_experiment(args) -> int:
    cfg = _load(args)
    spec = cfg.build_spec()
    out = Path(args.output)
    threads = args.threads or cfg.experiment.threads
    extra = {"kind": args.kind}
    if args.kind == "noise_sweep":
        levels = _levels(args, cfg)
        trials = args.trials or (ex.FULL_TRIALS if args.full_paper_scale else cfg.experiment.trials_per_level)
        try:
            sweep = ex.noise_sweep(
                spec, cfg.truth(), cfg.guess(), levels, trials, cfg.seed, cfg.learner_options(), cfg.experiment.noise_target, threads
            )
        except (ex.ExperimentError, InfeasibleGeometryError) as exc:
            raise SolverFailure(str(exc)) from exc
        write_csv(out / "trials.csv", sweep.trial_rows())
        write_csv(out / "aggregate.csv", sweep.aggregate_rows())
        extra.update(levels=list(levels), trials_per_level=trials, failed_trials=[(r.level, r.trial, r.status) for r in sweep.records if not np.isfinite(r.error)])
        print("median D per level:", ", ".join(f"{s:g}: {d:.3g}" for s, d in zip(levels, sweep.median_errors())))
    elif args.kind == "velocity_sweep":
        sigmas = tuple(float(s) for s in args.levels.split(",")) if args.levels else cfg.experiment.velocity_sigmas
        trials = args.trials or cfg.experiment.velocity_trials
        sweep = ex.velocity_sensitivity_sweep(spec, cfg.truth(), sigmas, trials, cfg.seed, cfg.solver, threads)
        write_csv(out / "velocity_sweep.csv", sweep.rows())
        extra.update(sigmas=list(sigmas), trials=trials, success_rate=sweep.success_rate.tolist())
        print("success rate:", ", ".join(f"{s:g}: {r:.2f}" for s, r in zip(sigmas, sweep.success_rate)))
    elif args.kind == "multi_robot":
        other_path = Path(args.multi_robot_config) if args.multi_robot_config else _sibling(args.config, cfg.experiment.multi_robot_config)
        other = ScenarioConfig.load(other_path)
        gen = ex.multi_robot_generalization(cfg.truth(), other.build_spec(), other.solver)
        write_json(out / "feasibility.json", gen.to_dict())
        if gen.result is not None:
            write_trajectory_csv(out / "trajectory.csv", gen.result.trajectory, other.orbit.dt)
        extra.update(multi_robot_config=str(other_path), status=gen.status, success=gen.success)
        print(f"{gen.status}; collision-free: {gen.success}")
    write_json(out / "manifest.json", manifest(cfg, args, extra))
    return EXIT_OK


def _sibling(config_path, name: str) -> Path:
    candidate = Path(config_path).parent / name
    return candidate if candidate.exists() else bundled_path(name)


def cmd_export_continuous(args) -> int:
    cfg = _load(args)
    n, m = cfg.orbit.mean_motion, cfg.orbit.satellite_mass
    Ac, Bc = hcw_continuous(n, m)
    full = hcw_matrices(cfg.orbit)
    planar = planar_dynamics(cfg.orbit)
    payload = {
        "mean_motion": n,
        "dt": cfg.orbit.dt,
        "continuous": {"A": Ac, "B": Bc},
        "discrete": {"A": full.A, "B": full.B},
        "planar": {"A": planar.A, "B": planar.B},
    }
    write_json(Path(args.output) / "dynamics.json", payload)
    write_json(Path(args.output) / "manifest.json", manifest(cfg, args))
    print(f"mean motion {n:.6e} rad/s; matrices written to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergames", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=str(bundled_path("table_scenario.json")), help="scenario JSON (default: bundled table scenario)")
        p.add_argument("--output", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("solve", help="solve the game and write the equilibrium")
    common(p)
    p.add_argument("--theta", choices=["truth", "guess"], default="truth", help="which parameter block of the config to use")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("learn", help="learn hyperplane parameters from an expert trajectory")
    common(p)
    p.add_argument("--expert", help="trajectory CSV; defaults to the equilibrium at the config's true parameters")
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p.add_argument("kind", choices=["noise_sweep", "velocity_sweep", "multi_robot"])
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--levels", help="comma-separated noise levels")
    p.add_argument("--threads", type=int)
    p.add_argument("--full-paper-scale", action="store_true", help="20 levels x 20 trials")
    p.add_argument("--multi-robot-config", help="scenario for multi_robot (default: six_robot.json)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export-continuous", help="dump the continuous and discrete dynamics matrices")
    common(p)
    p.set_defaults(func=cmd_export_continuous)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
