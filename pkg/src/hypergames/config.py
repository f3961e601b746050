"""JSON scenario files.

Physical quantities may be given as bare numbers (SI units) or as strings
with a unit suffix such as ``"400 km"`` or ``"0.015 rad/s"``. Serialization
always writes SI numbers, so ``parse(serialize(cfg)) == cfg``.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from hypergames.game import GameSpec, ThetaParams, all_pairs
from hypergames.hcw import EARTH_MU, EARTH_RADIUS, OrbitConstants, hcw_matrices, planar_dynamics
from hypergames.learning import LearnerOptions
from hypergames.scenarios import horizon_from_time
from hypergames.solver import SolveOptions

UNITS = {
    "length": {"m": 1.0, "km": 1e3},
    "time": {"s": 1.0, "min": 60.0},
    "mass": {"kg": 1.0},
    "force": {"N": 1.0},
    "rate": {"rad/s": 1.0},
    "velocity": {"m/s": 1.0},
    "mu": {"m^3/s^2": 1.0},
    "dimensionless": {},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)?\s*$")


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


def parse_quantity(value, kind: str, where: str = "value") -> float:
    """Number in SI units from a bare number or a ``"<number> <unit>"`` string."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a {kind} quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a {kind} quantity, got {type(value).__name__}")
    m = _QUANTITY.match(value)
    if not m:
        raise ConfigError(f"{where}: cannot read {value!r} as a {kind} quantity")
    number, unit = float(m.group(1)), m.group(2)
    if unit is None:
        return number
    table = UNITS[kind]
    if unit not in table:
        raise ConfigError(f"{where}: unit {unit!r} is not a {kind} unit (allowed: {', '.join(table)})")
    return number * table[unit]


def _per_pair(value, count: int, kind: str, where: str) -> list[float]:
    if isinstance(value, list):
        if len(value) != count:
            raise ConfigError(f"{where}: expected {count} entries, got {len(value)}")
        return [parse_quantity(v, kind, f"{where}[{k}]") for k, v in enumerate(value)]
    return [parse_quantity(value, kind, where)] * count


def _mask(value, count: int, where: str) -> list[bool]:
    if isinstance(value, bool):
        return [value] * count
    if isinstance(value, list) and len(value) == count and all(isinstance(v, bool) for v in value):
        return list(value)
    raise ConfigError(f"{where}: expected a boolean or {count} booleans")


@dataclass(frozen=True)
class ThetaConfig:
    omega: tuple
    rho: tuple
    xi: tuple
    learn_omega: tuple
    learn_rho: tuple
    learn_xi: tuple
    tied: bool = False

    def build(self) -> ThetaParams:
        return ThetaParams(
            np.array(self.omega), np.array(self.rho), np.array(self.xi),
            learn_omega=np.array(self.learn_omega), learn_rho=np.array(self.learn_rho),
            learn_xi=np.array(self.learn_xi), tied=self.tied,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    noise_levels: tuple = (0.0, 2.5, 5.0, 10.0, 20.0)
    trials_per_level: int = 5
    noise_target: str = "full_state"
    velocity_sigmas: tuple = (0.0, 0.1, 0.25, 0.5, 1.0, 2.0)
    velocity_trials: int = 20
    threads: int = 1
    multi_robot_config: str = "six_robot.json"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    orbit: OrbitConstants
    spatial_mode: str
    total_time: float
    thrust_limit: float
    initial_states: tuple  # per robot
    goals: tuple
    pairs: tuple
    theta: ThetaConfig
    initial_guess: ThetaConfig
    shared_multipliers: bool = True
    solver: SolveOptions = SolveOptions()
    learner: LearnerOptions = LearnerOptions()
    experiment: ExperimentConfig = ExperimentConfig()
    seed: int = 0

    @property
    def num_robots(self) -> int:
        return len(self.initial_states)

    @property
    def horizon(self) -> int:
        return horizon_from_time(self.total_time, self.orbit.dt)

    def build_spec(self) -> GameSpec:
        dyn = planar_dynamics(self.orbit) if self.spatial_mode == "planar" else hcw_matrices(self.orbit)
        return GameSpec(
            dynamics=dyn,
            initial_state=np.array(self.initial_states),
            goals=np.array(self.goals),
            horizon=self.horizon,
            dt=self.orbit.dt,
            thrust_limit=self.thrust_limit,
            pairs=self.pairs,
            shared_multipliers=self.shared_multipliers,
        )

    def truth(self) -> ThetaParams:
        return self.theta.build()

    def guess(self) -> ThetaParams:
        return self.initial_guess.build()

    def learner_options(self) -> LearnerOptions:
        return LearnerOptions(**{**_options_dict(self.learner), "solver": self.solver})

    # -- (de)serialization ---------------------------------------------

    def to_dict(self) -> dict:
        orbit = {
            "orbital_altitude": self.orbit.orbital_altitude,
            "satellite_mass": self.orbit.satellite_mass,
            "gravitational_parameter": self.orbit.gravitational_parameter,
            "earth_radius": self.orbit.earth_radius,
        }
        return {
            "name": self.name,
            "orbit": orbit,
            "spatial_mode": self.spatial_mode,
            "horizon": {"dt": self.orbit.dt, "total_time": self.total_time},
            "thrust_limit": self.thrust_limit,
            "robots": [{"initial_state": list(x), "goal": list(g)} for x, g in zip(self.initial_states, self.goals)],
            "pairs": [list(p) for p in self.pairs],
            "shared_multipliers": self.shared_multipliers,
            "theta": _theta_dict(self.theta),
            "initial_guess": _theta_dict(self.initial_guess),
            "solver": asdict(self.solver),
            "learner": _options_dict(self.learner),
            "experiment": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.experiment).items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario file must hold a JSON object")
        known = {"name", "orbit", "spatial_mode", "horizon", "thrust_limit", "robots", "pairs", "shared_multipliers",
                 "theta", "initial_guess", "solver", "learner", "experiment", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        try:
            orbit_d = dict(data.get("orbit", {}))
            hor = dict(data.get("horizon", {}))
            orbit = OrbitConstants(
                orbital_altitude=parse_quantity(orbit_d.pop("orbital_altitude", 400e3), "length", "orbit.orbital_altitude"),
                satellite_mass=parse_quantity(orbit_d.pop("satellite_mass", 100.0), "mass", "orbit.satellite_mass"),
                dt=parse_quantity(hor.pop("dt", 5.0), "time", "horizon.dt"),
                gravitational_parameter=parse_quantity(orbit_d.pop("gravitational_parameter", EARTH_MU), "mu", "orbit.gravitational_parameter"),
                earth_radius=parse_quantity(orbit_d.pop("earth_radius", EARTH_RADIUS), "length", "orbit.earth_radius"),
            )
            if orbit_d or set(hor) - {"total_time"}:
                raise ConfigError(f"unknown orbit/horizon keys: {sorted(set(orbit_d) | (set(hor) - {'total_time'}))}")
            if not orbit.dt > 0:
                raise ConfigError("horizon.dt must be positive")
            total_time = parse_quantity(hor.get("total_time", 220.0), "time", "horizon.total_time")
            mode = data.get("spatial_mode", "planar")
            if mode not in ("planar", "full3d"):
                raise ConfigError(f"spatial_mode must be 'planar' or 'full3d', got {mode!r}")
            nx, npos = (4, 2) if mode == "planar" else (6, 3)
            robots = data.get("robots")
            if not isinstance(robots, list) or not robots:
                raise ConfigError("robots must be a non-empty list")
            x0, goals = [], []
            for k, r in enumerate(robots):
                x = [float(v) for v in r["initial_state"]]
                g = [float(v) for v in r["goal"]]
                if len(x) != nx or len(g) != npos:
                    raise ConfigError(f"robots[{k}]: {mode} mode needs {nx} state and {npos} goal components")
                x0.append(tuple(x))
                goals.append(tuple(g))
            N = len(robots)
            pairs_raw = data.get("pairs", "all")
            pairs = all_pairs(N) if pairs_raw == "all" else tuple((int(i), int(j)) for i, j in pairs_raw)
            theta = _theta_from(data.get("theta", {}), len(pairs), N, "theta")
            guess = _theta_from(data.get("initial_guess", data.get("theta", {})), len(pairs), N, "initial_guess")
            solver = SolveOptions(**data.get("solver", {}))
            learner_d = dict(data.get("learner", {}))
            learner_d.pop("solver", None)
            learner = LearnerOptions(**learner_d)
            exp_d = {k: tuple(v) if isinstance(v, list) else v for k, v in data.get("experiment", {}).items()}
            experiment = ExperimentConfig(**exp_d)
            cfg = cls(
                name=str(data.get("name", "scenario")),
                orbit=orbit,
                spatial_mode=mode,
                total_time=total_time,
                thrust_limit=parse_quantity(data.get("thrust_limit", 1.0), "force", "thrust_limit"),
                initial_states=tuple(x0),
                goals=tuple(goals),
                pairs=pairs,
                theta=theta,
                initial_guess=guess,
                shared_multipliers=bool(data.get("shared_multipliers", True)),
                solver=solver,
                learner=learner,
                experiment=experiment,
                seed=int(data.get("seed", 0)),
            )
            cfg.build_spec()
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _theta_from(d: dict, P: int, N: int, where: str) -> ThetaConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - {"omega", "rho", "xi", "learn_omega", "learn_rho", "learn_xi", "tied"}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return ThetaConfig(
        omega=tuple(_per_pair(d.get("omega", 0.015), P, "rate", f"{where}.omega")),
        rho=tuple(_per_pair(d.get("rho", 30.0), P, "length", f"{where}.rho")),
        xi=tuple(_per_pair(d.get("xi", 1e-4), N, "dimensionless", f"{where}.xi")),
        learn_omega=tuple(_mask(d.get("learn_omega", True), P, f"{where}.learn_omega")),
        learn_rho=tuple(_mask(d.get("learn_rho", True), P, f"{where}.learn_rho")),
        learn_xi=tuple(_mask(d.get("learn_xi", False), N, f"{where}.learn_xi")),
        tied=bool(d.get("tied", False)),
    )


def _theta_dict(t: ThetaConfig) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(t).items()}


def _options_dict(opts: LearnerOptions) -> dict:
    return {f.name: getattr(opts, f.name) for f in fields(opts) if f.name != "solver"}


def bundled_path(name: str) -> Path:
    """Path of a scenario file shipped with the package (``table_scenario.json``, ``six_robot.json``)."""
    ref = resources.files("hypergames") / "data" / name
    return Path(str(ref))


def load_bundled(name: str) -> ScenarioConfig:
    return ScenarioConfig.load(bundled_path(name))
