"""Scenario files: workspace, regions, model, task, weights and budget.

Scenarios are TOML documents::

    schema_version = 1
    name = "demo"

    [workspace]
    lower = [0.0, 0.0]
    upper = [6.0, 6.0]

    [model]
    name = "single-integrator-2d"   # or "double-integrator-3d", "custom"
    input_bound = 0.22

    [[region]]
    name = "T1"
    role = "target"                 # or "obstacle"
    center = [3.0, 0.9]
    halfwidths = [0.4, 0.4]

    [task]
    start = [0.1, 0.1]
    goal = [5.5, 5.5]

    [formula]
    text = "F in(T1) & G !in(O1)"

    [weights]
    mu1 = 1.0
    mu2 = 10.0

    [budget]
    iterations = 2000
    time_budget = 600.0
    seed = 0
    dt = 0.05

All numbers are SI.  ``[planner]`` may override ``goal_bias``,
``max_neighbors`` and ``inflation``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .dynamics import SystemModel, custom_model, double_integrator, single_integrator
from .logic import Formula, FormulaSyntaxError, Predicate, UnknownRegionError, parse_formula

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioError",
    "Region",
    "ModelSpec",
    "PlannerSettings",
    "Scenario",
    "load_scenario",
    "loads_scenario",
    "dumps_scenario",
    "save_scenario",
    "builtin_scenarios",
    "get_builtin",
    "resolve_scenario",
]

SCHEMA_VERSION = 1
TARGET = "target"
OBSTACLE = "obstacle"
MODEL_NAMES = ("single-integrator-2d", "double-integrator-3d", "custom")


class ScenarioError(ValueError):
    pass


def _floats(v) -> tuple[float, ...]:
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class Region:
    name: str
    center: tuple[float, ...]
    halfwidths: tuple[float, ...]
    role: str = TARGET

    def __post_init__(self):
        object.__setattr__(self, "center", _floats(self.center))
        object.__setattr__(self, "halfwidths", _floats(self.halfwidths))

    @property
    def lower(self) -> np.ndarray:
        return np.subtract(self.center, self.halfwidths)

    @property
    def upper(self) -> np.ndarray:
        return np.add(self.center, self.halfwidths)

    def predicate(self) -> Predicate:
        return Predicate(self.name, self.center, self.halfwidths)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_bound: float
    velocity_bound: float | None = None
    mass: float = 1.0
    control_weight: tuple[float, ...] | None = None   # diagonal of R
    state_lower: tuple[float, ...] | None = None
    state_upper: tuple[float, ...] | None = None
    dynamics: str | None = None                        # custom models only
    position_dims: int | None = None
    max_speed: float | None = None


@dataclass(frozen=True)
class PlannerSettings:
    goal_bias: float = 0.05
    max_neighbors: int = 12
    inflation: float = 0.0


@dataclass(frozen=True)
class Scenario:
    name: str
    workspace_lower: tuple[float, ...]
    workspace_upper: tuple[float, ...]
    model: ModelSpec
    regions: tuple[Region, ...]
    start: tuple[float, ...]
    goal: tuple[float, ...]
    formula_text: str
    mu1: float = 1.0
    mu2: float = 10.0
    iterations: int = 5000
    time_budget: float = 600.0
    seed: int = 0
    dt: float = 0.05
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    # -- derived objects -----------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.workspace_lower)

    @property
    def rho_max(self) -> float:
        """Robustness assigned to ``true``: the workspace diagonal."""
        return float(np.linalg.norm(np.subtract(self.workspace_upper, self.workspace_lower)))

    @property
    def obstacles(self) -> tuple[Region, ...]:
        return tuple(r for r in self.regions if r.role == OBSTACLE)

    @property
    def targets(self) -> tuple[Region, ...]:
        return tuple(r for r in self.regions if r.role == TARGET)

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def predicates(self) -> dict[str, Predicate]:
        return {r.name: r.predicate() for r in self.regions}

    def formula(self) -> Formula:
        return parse_formula(self.formula_text, self.predicates())

    def build_model(self) -> SystemModel:
        m = self.model
        lo, hi = self.workspace_lower, self.workspace_upper
        R = None if m.control_weight is None else np.diag(m.control_weight)
        if m.name == "single-integrator-2d":
            model = single_integrator(
                m.state_lower or lo, m.state_upper or hi, speed=m.input_bound, R=R)
        elif m.name == "double-integrator-3d":
            vel = m.velocity_bound if m.velocity_bound is not None else 1.0
            if m.state_lower is not None:
                model = double_integrator(m.state_lower, m.state_upper, thrust=m.input_bound,
                                          velocity=vel, mass=m.mass, R=R, dim=self.dim)
            else:
                model = double_integrator(lo, hi, thrust=m.input_bound, velocity=vel,
                                          mass=m.mass, R=R)
        elif m.name == "custom":
            if not (m.dynamics and m.state_lower and m.state_upper):
                raise ScenarioError("custom model needs dynamics, state_lower and state_upper")
            nu = len(m.control_weight) if m.control_weight else self.dim
            model = custom_model(
                m.dynamics, state_lower=m.state_lower, state_upper=m.state_upper,
                input_lower=[-m.input_bound] * nu, input_upper=[m.input_bound] * nu, R=R,
                position_dims=m.position_dims or self.dim,
                max_speed=m.max_speed or m.velocity_bound or m.input_bound,
            )
        else:
            raise ScenarioError(f"unknown model {m.name!r}; expected one of {MODEL_NAMES}")
        if model.position_dims != self.dim:
            raise ScenarioError(
                f"model {model.name} has {model.position_dims} position dims, workspace has {self.dim}")
        return model

    def full_state(self, point) -> np.ndarray:
        """Pad a workspace point with zero velocities when the model needs it."""
        n = self.build_model().n
        x = np.zeros(n)
        p = np.asarray(point, float)
        x[: len(p)] = p
        return x

    def in_obstacle(self, position, inflation: float = 0.0) -> bool:
        p = np.asarray(position, float)[: self.dim]
        return any(
            np.all(p >= r.lower - inflation) and np.all(p <= r.upper + inflation)
            for r in self.obstacles
        )

    # -- validation ------------------------------------------------------
    def validate(self) -> "Scenario":
        if self.schema_version != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {self.schema_version}")
        lo = np.asarray(self.workspace_lower)
        hi = np.asarray(self.workspace_upper)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ScenarioError("workspace box is empty")
        names = [r.name for r in self.regions]
        if len(set(names)) != len(names):
            raise ScenarioError("region names must be unique")
        for r in self.regions:
            if r.role not in (TARGET, OBSTACLE):
                raise ScenarioError(f"region {r.name}: role must be 'target' or 'obstacle'")
            if len(r.center) != self.dim or len(r.halfwidths) != self.dim:
                raise ScenarioError(f"region {r.name}: dimension differs from workspace")
            if any(h <= 0 for h in r.halfwidths):
                raise ScenarioError(f"region {r.name}: halfwidths must be positive")
            if np.any(r.lower >= hi) or np.any(r.upper <= lo):
                raise ScenarioError(f"region {r.name} does not intersect the workspace")
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise ScenarioError("weights mu1 and mu2 must be positive")
        if self.iterations < 1 or self.time_budget <= 0 or self.dt <= 0:
            raise ScenarioError("budget values must be positive")
        if not 0 <= self.planner.goal_bias < 1:
            raise ScenarioError("goal_bias must lie in [0, 1)")
        try:
            model = self.build_model()
        except ScenarioError:
            raise
        except (ValueError, ImportError, AttributeError) as exc:
            raise ScenarioError(f"invalid model: {exc}") from exc
        for label, point in (("start", self.start), ("goal", self.goal)):
            if len(point) not in (self.dim, model.n):
                raise ScenarioError(f"{label} has dimension {len(point)}")
            x = self.full_state(point)
            if np.any(x < model.state_lower) or np.any(x > model.state_upper):
                raise ScenarioError(f"{label} {point} lies outside the state bounds")
            if self.in_obstacle(x):
                raise ScenarioError(f"{label} {point} lies inside an obstacle")
        try:
            self.formula()
        except UnknownRegionError as exc:
            raise ScenarioError(f"formula references an undeclared region: {exc}") from exc
        except FormulaSyntaxError as exc:
            raise ScenarioError(f"formula: {exc}") from exc
        return self

    # -- (de)serialisation -----------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        model = {k: (list(v) if isinstance(v, tuple) else v)
                 for k, v in asdict(self.model).items() if v is not None}
        return {
            "schema_version": self.schema_version,
            "name": self.name,
            "description": self.description,
            "workspace": {"lower": list(self.workspace_lower), "upper": list(self.workspace_upper)},
            "model": model,
            "region": [
                {"name": r.name, "role": r.role, "center": list(r.center),
                 "halfwidths": list(r.halfwidths)}
                for r in self.regions
            ],
            "task": {"start": list(self.start), "goal": list(self.goal)},
            "formula": {"text": self.formula_text},
            "weights": {"mu1": self.mu1, "mu2": self.mu2},
            "budget": {"iterations": self.iterations, "time_budget": self.time_budget,
                       "seed": self.seed, "dt": self.dt},
            "planner": asdict(self.planner),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Scenario":
        try:
            ws = doc["workspace"]
            model_doc = dict(doc["model"])
            for key in ("control_weight", "state_lower", "state_upper"):
                if key in model_doc:
                    model_doc[key] = _floats(model_doc[key])
            unknown = set(model_doc) - {f.name for f in fields(ModelSpec)}
            if unknown:
                raise ScenarioError(f"unknown [model] keys: {sorted(unknown)}")
            regions = tuple(
                Region(r["name"], r["center"], r["halfwidths"], r.get("role", TARGET))
                for r in doc.get("region", [])
            )
            weights = doc.get("weights", {})
            budget = doc.get("budget", {})
            return cls(
                name=str(doc.get("name", "scenario")),
                description=str(doc.get("description", "")),
                schema_version=int(doc.get("schema_version", SCHEMA_VERSION)),
                workspace_lower=_floats(ws["lower"]),
                workspace_upper=_floats(ws["upper"]),
                model=ModelSpec(**model_doc),
                regions=regions,
                start=_floats(doc["task"]["start"]),
                goal=_floats(doc["task"]["goal"]),
                formula_text=str(doc["formula"]["text"]),
                mu1=float(weights.get("mu1", 1.0)),
                mu2=float(weights.get("mu2", 10.0)),
                iterations=int(budget.get("iterations", 5000)),
                time_budget=float(budget.get("time_budget", 600.0)),
                seed=int(budget.get("seed", 0)),
                dt=float(budget.get("dt", 0.05)),
                planner=PlannerSettings(**doc.get("planner", {})),
            )
        except KeyError as exc:
            raise ScenarioError(f"missing required key {exc}") from exc
        except TypeError as exc:
            raise ScenarioError(str(exc)) from exc


def loads_scenario(text: str) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        # message carries "(at line L, column C)"
        raise ScenarioError(f"parse error: {exc}") from exc
    return Scenario.from_dict(doc).validate()


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return loads_scenario(text)


def dumps_scenario(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario.to_dict())


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(scenario))


# --------------------------------------------------------------------------
# built-ins.  Region geometry is not given numerically for these tasks; the
# boxes below are laid out to reproduce the qualitative situations (which
# target is on the cheaper route, which obstacles flank it).

_AVOID_2D = "G (!in(O1) & !in(O2) & !in(O3))"

_PSI1_REGIONS = (
    Region("T1", (3.0, 0.9), (0.4, 0.4)),
    Region("T2", (5.4, 1.2), (0.4, 0.4)),        # off to the right: modest detour
    Region("T3", (0.9, 4.8), (0.4, 0.4)),        # far upper-left: long detour
    Region("O1", (1.5, 2.5), (0.6, 0.6), OBSTACLE),
    Region("O2", (3.0, 4.5), (0.5, 0.5), OBSTACLE),
    Region("O3", (2.0, 4.0), (0.4, 0.4), OBSTACLE),
)
# T3 moved onto the straight line from T1 to the goal
_PSI1_T3_MOVED = Region("T3", (4.3, 3.5), (0.4, 0.4))

_PSI2_REGIONS = (
    Region("T1", (2.7, 3.3), (0.4, 0.4)),
    Region("T2", (1.0, 5.0), (0.4, 0.4)),
    Region("T3", (4.7, 4.7), (0.4, 0.4)),
    Region("O1", (1.4, 2.2), (0.5, 0.5), OBSTACLE),
    Region("O2", (3.8, 2.0), (0.5, 0.6), OBSTACLE),
    Region("O3", (2.8, 5.1), (0.4, 0.5), OBSTACLE),
)

_PSI3_REGIONS = (
    Region("T1", (1.2, 1.2, 1.0), (0.5, 0.5, 0.5)),
    Region("T2", (3.0, 1.2, 2.2), (0.5, 0.5, 0.5)),
    Region("T3", (4.6, 2.6, 3.0), (0.5, 0.5, 0.5)),
    Region("T4", (4.6, 4.4, 4.2), (0.5, 0.5, 0.5)),
    Region("T5", (5.0, 5.2, 5.4), (0.5, 0.5, 0.5)),
    Region("O", (2.8, 3.2, 3.0), (0.9, 0.9, 3.0), OBSTACLE),   # central pillar
)


# Root robustness only sees the worst conjunct, so a path that skims a
# target by a centimetre pays just mu2 * 0.01.  With mu2 = 10 that is cheaper
# than the control cost of dipping into the region and the tree settles on
# near misses; the built-ins use 100 so small margins dominate.
_BUILTIN_MU2 = 100.0


def _robot(name, regions, goal, formula, description, iterations=2000) -> Scenario:
    return Scenario(
        name=name, description=description,
        workspace_lower=(0.0, 0.0), workspace_upper=(6.0, 6.0),
        model=ModelSpec("single-integrator-2d", input_bound=0.22),
        regions=regions, start=(0.1, 0.1), goal=goal, formula_text=formula,
        mu2=_BUILTIN_MU2, iterations=iterations, time_budget=600.0,
    )


def _builtins() -> dict[str, Scenario]:
    psi1_formula = f"F in(T1) & F (in(T2) | in(T3)) & {_AVOID_2D}"
    psi1 = _robot("psi1", _PSI1_REGIONS, (5.5, 5.5), psi1_formula,
                  "mobile robot: visit T1 and one of T2/T3, avoid O1-O3")
    moved = tuple(_PSI1_T3_MOVED if r.name == "T3" else r for r in _PSI1_REGIONS)
    psi1_moved = replace(psi1, name="psi1-moved-T3", regions=moved,
                         description="psi1 with T3 relocated next to the direct route")
    psi2 = _robot("psi2", _PSI2_REGIONS, (5.5, 1.5),
                  f"G (F in(T1)) & F in(T2) & F in(T3) & {_AVOID_2D}",
                  "mobile robot: always eventually T1, eventually T2 and T3, avoid O1-O3")
    psi3 = Scenario(
        name="psi3",
        description="UAV: eventually visit T1-T5, always avoid O",
        workspace_lower=(0.0, 0.0, 0.0), workspace_upper=(6.0, 6.0, 6.0),
        # the goal altitude 6.25 m sits above the 6 m workspace; the state box
        # is extended in z so that the goal is an admissible state
        model=ModelSpec("double-integrator-3d", input_bound=5.0, velocity_bound=1.0,
                        state_lower=(0.0, 0.0, 0.0, -1.0, -1.0, -1.0),
                        state_upper=(6.0, 6.0, 6.5, 1.0, 1.0, 1.0)),
        regions=_PSI3_REGIONS,
        start=(0.1, 0.1, 0.1), goal=(5.5, 5.5, 6.25),
        formula_text="F in(T1) & F in(T2) & F in(T3) & F in(T4) & F in(T5) & G !in(O)",
        mu2=_BUILTIN_MU2, iterations=3000, time_budget=900.0,
    )
    return {s.name: s for s in (psi1, psi1_moved, psi2, psi3)}


def builtin_scenarios() -> list[str]:
    return list(_builtins())


def get_builtin(name: str) -> Scenario:
    try:
        return _builtins()[name].validate()
    except KeyError:
        raise ScenarioError(
            f"unknown built-in scenario {name!r}; choose from {builtin_scenarios()}") from None


def resolve_scenario(name_or_path: str) -> Scenario:
    """Built-in name, or path to a scenario file."""
    if name_or_path in _builtins():
        return get_builtin(name_or_path)
    return load_scenario(name_or_path)
