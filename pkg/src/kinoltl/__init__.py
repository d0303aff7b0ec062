"""Kinodynamic RRT* with closed-form optimal-control edges and TLTL robustness costs."""
from .dynamics import (
    LinearizedSystem,
    SystemModel,
    double_integrator,
    integrate_ode,
    linearize,
    single_integrator,
)
from .logic import (
    Formula,
    Predicate,
    RobustnessState,
    init_robustness,
    parse_formula,
    tltl_edge_cost,
    trace_robustness,
    update_robustness,
)
from .planner import PlanResult, Planner, plan
from .scenario import Scenario, get_builtin, load_scenario
from .steering import SteeringEdge, gramian, optimal_arrival_time, steer, steer_fixed_time

__version__ = "0.1.0"

__all__ = [
    "LinearizedSystem",
    "SystemModel",
    "double_integrator",
    "integrate_ode",
    "linearize",
    "single_integrator",
    "Formula",
    "Predicate",
    "RobustnessState",
    "init_robustness",
    "parse_formula",
    "tltl_edge_cost",
    "trace_robustness",
    "update_robustness",
    "PlanResult",
    "Planner",
    "plan",
    "Scenario",
    "get_builtin",
    "load_scenario",
    "SteeringEdge",
    "gramian",
    "optimal_arrival_time",
    "steer",
    "steer_fixed_time",
]
