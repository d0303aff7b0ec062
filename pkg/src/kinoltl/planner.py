"""RRT* over optimal-control edges with a robustness-shaped cost.

Each node stores the accumulated control cost, the robustness slots of
the path that reaches it and the total cost

    cost = control cost + mu2 * (capped root robustness at the start
                                 - capped root robustness of the path)

which is the per-edge sum of ``mu1 * c_C + mu2 * c_TLTL``.  Robustness is
path dependent, so a rewire re-monitors the whole subtree below the
rewired node.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .dynamics import SystemModel, check_bounds, linearize
from .logic import (
    Formula,
    RobustnessState,
    capped,
    init_robustness,
    tltl_edge_cost,
    update_robustness,
)
from .scenario import Scenario
from .steering import SteeringError, steer

__all__ = [
    "Edge",
    "LineEdge",
    "TreeNode",
    "SpatialIndex",
    "PlanTree",
    "PlanStats",
    "PlanResult",
    "Planner",
    "near_radius",
    "implied_controls",
    "concatenate_edges",
    "near_set",
    "collision_free",
    "sample_free",
    "plan",
    "WorkspaceError",
]

log = logging.getLogger(__name__)

KINODYNAMIC = "kinodynamic"
GEOMETRIC = "geometric-baseline"


class WorkspaceError(RuntimeError):
    """Free space could not be sampled."""


class Edge(Protocol):
    x0: np.ndarray
    x1: np.ndarray
    tau: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    control_cost: float


@dataclass
class LineEdge:
    """Straight segment traversed at constant speed (geometric baseline)."""

    x0: np.ndarray
    x1: np.ndarray
    tau: float
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    control_cost: float
    max_input_excess: float = 0.0
    max_state_excess: float = 0.0

    @classmethod
    def between(cls, x0, x1, speed: float, mu1: float, dt: float) -> "LineEdge":
        x0 = np.asarray(x0, float)
        x1 = np.asarray(x1, float)
        length = float(np.linalg.norm(x1 - x0))
        if length == 0.0:
            raise SteeringError("identical endpoints")
        tau = length / speed
        steps = max(1, math.ceil(tau / dt - 1e-9))
        s = np.linspace(0.0, 1.0, steps + 1)[:, None]
        states = x0 + s * (x1 - x0)
        vel = (x1 - x0) / tau
        return cls(x0, x1, tau, np.linspace(0.0, tau, steps + 1), states,
                   np.tile(vel, (steps + 1, 1)), mu1 * tau)


@dataclass
class TreeNode:
    id: int
    state: np.ndarray
    parent: int | None
    control_cost: float
    cost: float
    robustness: RobustnessState
    edge: Edge | None = None
    arrival_time: float = 0.0
    is_goal: bool = False
    children: set[int] = field(default_factory=set)


class SpatialIndex:
    """Brute-force Euclidean index over a growing point set."""

    def __init__(self, dim: int, capacity: int = 1024):
        self._pts = np.empty((capacity, dim))
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        return self._pts[: self._n]

    def add(self, x) -> int:
        if self._n == len(self._pts):
            self._pts = np.concatenate([self._pts, np.empty_like(self._pts)])
        self._pts[self._n] = x
        self._n += 1
        return self._n - 1

    def distances(self, x) -> np.ndarray:
        return np.linalg.norm(self.points - np.asarray(x, float), axis=1)

    def within(self, x, r: float) -> np.ndarray:
        d = self.distances(x)
        idx = np.flatnonzero(d < r)
        return idx[np.argsort(d[idx], kind="stable")]

    def nearest(self, x) -> int:
        return int(np.argmin(self.distances(x)))


@dataclass
class PlanTree:
    nodes: list[TreeNode]
    index: SpatialIndex
    seed: int
    goal_ids: list[int] = field(default_factory=list)

    def path(self, node_id: int) -> list[int]:
        out = []
        cur: int | None = node_id
        while cur is not None:
            out.append(cur)
            cur = self.nodes[cur].parent
        return out[::-1]

    def is_ancestor(self, a: int, b: int) -> bool:
        """True when ``a`` lies on the root path of ``b``."""
        cur: int | None = b
        while cur is not None:
            if cur == a:
                return True
            cur = self.nodes[cur].parent
        return False

    def descendants(self, node_id: int) -> list[int]:
        """Breadth-first order, parents before children."""
        out, frontier = [], [node_id]
        while frontier:
            nxt = []
            for i in frontier:
                for c in sorted(self.nodes[i].children):
                    out.append(c)
                    nxt.append(c)
            frontier = nxt
        return out

    def is_tree(self) -> bool:
        """Union-find acyclicity check over the parent links."""
        parent = list(range(len(self.nodes)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        roots = 0
        for node in self.nodes:
            if node.parent is None:
                roots += 1
                continue
            a, b = find(node.id), find(node.parent)
            if a == b:
                return False
            parent[a] = b
        return roots == 1


@dataclass
class PlanStats:
    iterations: int = 0
    nodes: int = 0
    goal_connections: int = 0
    rejected_edges: int = 0
    rejected_steering: int = 0
    rejected_bounds: int = 0
    rejected_collision: int = 0
    discarded_samples: int = 0
    rewires: int = 0
    wall_time: float = 0.0


@dataclass
class PlanResult:
    found: bool
    satisfied: bool
    total_cost: float
    root_robustness: float
    times: np.ndarray | None
    states: np.ndarray | None
    controls: np.ndarray | None
    edges: list
    robustness: RobustnessState | None
    stats: PlanStats
    mode: str = KINODYNAMIC
    tree: PlanTree | None = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return float(self.times[-1]) if self.found else 0.0

    @property
    def max_control_effort(self) -> np.ndarray:
        """Per-component maximum of ``|u|``.

        Kinodynamic results take every edge sample; baseline results take the
        finite-difference inputs of the concatenated path.
        """
        if not self.found:
            return np.zeros(0)
        if self.mode == GEOMETRIC:
            return np.max(np.abs(self.controls), axis=0)
        return np.max(np.abs(np.vstack([e.controls for e in self.edges])), axis=0)


def concatenate_edges(edges) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Join edge samples; junction samples carry the outgoing edge's control."""
    ts, xs, us = [], [], []
    t0 = 0.0
    for e in edges:
        ts.append(t0 + e.times[:-1])
        xs.append(e.states[:-1])
        us.append(e.controls[:-1])
        t0 += e.tau
    last = edges[-1]
    ts.append([t0])
    xs.append(last.states[-1:])
    us.append(last.controls[-1:])
    return np.concatenate(ts), np.vstack(xs), np.vstack(us)


def implied_controls(times, positions, order: int, mass: float = 1.0):
    """Finite-difference states and inputs of a path given as sampled positions.

    ``order`` is the relative degree of the input: 1 for velocity inputs,
    2 for force inputs (scaled by ``mass``).  Returns ``(states, controls)``
    where states are positions, followed by velocities when ``order == 2``.
    """
    t = np.asarray(times, float)
    P = np.asarray(positions, float)
    h = np.diff(t)
    if np.any(h <= 0):
        raise ValueError("times must be strictly increasing")
    vel = np.diff(P, axis=0) / h[:, None]
    vel = np.vstack([vel, vel[-1:]])
    if order == 1:
        return P, vel
    if order != 2:
        raise ValueError("order must be 1 or 2")
    acc = np.zeros_like(P)
    if len(P) > 2:
        h1, h2 = h[:-1, None], h[1:, None]
        acc[1:-1] = 2.0 * ((P[2:] - P[1:-1]) / h2 - (P[1:-1] - P[:-2]) / h1) / (h1 + h2)
        acc[0], acc[-1] = acc[1], acc[-2]
    return np.hstack([P, vel]), mass * acc


def near_radius(n: int, n_dim: int, diagonal: float) -> float:
    gamma = 2.0 * diagonal
    return min(diagonal / 4.0, gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / n_dim))


def near_set(tree: PlanTree, x, r: float) -> list[int]:
    """Ids of all nodes strictly closer than ``r`` to ``x``, nearest first."""
    if r <= 0:
        raise ValueError("radius must be positive")
    return [int(i) for i in tree.index.within(x, r)]


def collision_free(states, scenario: Scenario, inflation: float = 0.0,
                   state_lower=None, state_upper=None) -> bool:
    """All samples inside the state box and outside every (closed) obstacle."""
    X = np.atleast_2d(np.asarray(states, float))
    if state_lower is not None and (np.any(X < state_lower) or np.any(X > state_upper)):
        return False
    P = X[:, : scenario.dim]
    for r in scenario.obstacles:
        inside = np.all((P >= r.lower - inflation) & (P <= r.upper + inflation), axis=1)
        if inside.any():
            return False
    return True


def sample_free(rng: np.random.Generator, lower, upper, scenario: Scenario, goal=None,
                goal_bias: float = 0.0, inflation: float = 0.0, max_tries: int = 10_000):
    """Uniform sample of the state box outside obstacles, with goal bias."""
    if goal is not None and goal_bias > 0 and rng.random() < goal_bias:
        return np.array(goal, float), True
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    for _ in range(max_tries):
        x = rng.uniform(lower, upper)
        if not scenario.in_obstacle(x, inflation):
            return x, False
    raise WorkspaceError(f"{max_tries} consecutive samples fell inside obstacles")


class Planner:
    """Algorithm state for one planning run.

    ``mode`` selects optimal-control edges (``"kinodynamic"``) or straight
    edges at the model's nominal speed without input bounds
    (``"geometric-baseline"``).
    """

    def __init__(self, scenario: Scenario, *, mode: str = KINODYNAMIC, seed: int | None = None,
                 iterations: int | None = None, time_budget: float | None = None,
                 formula: Formula | None = None, max_neighbors: int | None = None,
                 goal_bias: float | None = None, test_mode: bool = False,
                 check_every: int = 500, on_iteration: Callable | None = None):
        if mode not in (KINODYNAMIC, GEOMETRIC):
            raise ValueError(f"unknown mode {mode!r}")
        self.scenario = scenario
        self.mode = mode
        self.model: SystemModel = scenario.build_model()
        self.formula = formula if formula is not None else scenario.formula()
        self.rho_max = scenario.rho_max
        self.mu1, self.mu2 = scenario.mu1, scenario.mu2
        self.dt = scenario.dt
        self.seed = scenario.seed if seed is None else seed
        self.iterations = scenario.iterations if iterations is None else iterations
        self.time_budget = scenario.time_budget if time_budget is None else time_budget
        settings = scenario.planner
        self.max_neighbors = settings.max_neighbors if max_neighbors is None else max_neighbors
        self.goal_bias = settings.goal_bias if goal_bias is None else goal_bias
        self.inflation = settings.inflation
        self.test_mode = test_mode
        self.check_every = check_every
        self.on_iteration = on_iteration
        self.rng = np.random.default_rng(self.seed)
        self.pdim = scenario.dim
        self.diagonal = scenario.rho_max

        if mode == KINODYNAMIC:
            self.lower = self.model.state_lower
            self.upper = self.model.state_upper
            self.start = scenario.full_state(scenario.start)
            self.goal = scenario.full_state(scenario.goal)
        else:
            self.lower = self.model.state_lower[: self.pdim]
            self.upper = self.model.state_upper[: self.pdim]
            self.start = np.asarray(scenario.start[: self.pdim], float)
            self.goal = np.asarray(scenario.goal[: self.pdim], float)
        self.n_dim = len(self.start)
        self.speed = self.model.max_speed
        self.tau_max = 4.0 * self.diagonal / self.speed
        # per-component box bounds allow speeds up to sqrt(dim) times the bound
        self._speed_lb = self.speed * math.sqrt(self.pdim)
        self._lin = None

        root_rob = init_robustness(self.formula, self.start[: self.pdim], self.rho_max)
        self.rho0 = capped(root_rob.root)
        root = TreeNode(0, self.start.copy(), None, 0.0, 0.0, root_rob)
        index = SpatialIndex(self.n_dim)
        index.add(root.state)
        self.tree = PlanTree([root], index, self.seed)
        self.stats = PlanStats()
        self._best: tuple | None = None    # (cost, edges, robustness)
        self._best_cost_history: list[float] = []

    # -- edges -----------------------------------------------------------
    def _linearization(self, x_from):
        if self.model.is_linear:
            if self._lin is None:
                self._lin = linearize(self.model, self.start)
            return self._lin
        return linearize(self.model, x_from)

    def connect(self, x_from, x_to):
        """Valid edge ``x_from -> x_to`` or ``None``."""
        if self.mode == GEOMETRIC:
            try:
                edge = LineEdge.between(x_from, x_to, self.speed, self.mu1, self.dt)
            except SteeringError:
                self.stats.rejected_steering += 1
                return None
            if not collision_free(edge.states, self.scenario, self.inflation, self.lower, self.upper):
                self.stats.rejected_collision += 1
                return None
            return edge
        try:
            edge = steer(self._linearization(x_from), x_from, x_to, self.mu1, dt=self.dt,
                         tau_max=self.tau_max, stretch_to_bounds=True)
        except (SteeringError, np.linalg.LinAlgError):
            self.stats.rejected_steering += 1
            return None
        if not edge.feasible:
            self.stats.rejected_bounds += 1
            return None
        if not collision_free(edge.states, self.scenario, self.inflation):
            self.stats.rejected_collision += 1
            return None
        return edge

    def _monitor(self, parent: TreeNode, edge) -> RobustnessState:
        return update_robustness(self.formula, parent.robustness,
                                 edge.states[1:, : self.pdim], self.rho_max)

    def _edge_total(self, parent: TreeNode, edge, rob: RobustnessState) -> float:
        return parent.cost + edge.control_cost + self.mu2 * tltl_edge_cost(
            self.formula, parent.robustness, rob)

    def _lower_bound(self, parent: TreeNode, x_to) -> float:
        dist = float(np.linalg.norm(np.asarray(x_to)[: self.pdim] - parent.state[: self.pdim]))
        return parent.cost + self.mu1 * dist / self._speed_lb + self.mu2 * capped(parent.robustness.root)

    # -- tree mutation ---------------------------------------------------
    def _add_node(self, x, parent_id: int, edge, rob: RobustnessState, cost: float,
                  is_goal: bool = False) -> int:
        parent = self.tree.nodes[parent_id]
        nid = len(self.tree.nodes)
        node = TreeNode(nid, np.array(x, float), parent_id, parent.control_cost + edge.control_cost,
                        cost, rob, edge, parent.arrival_time + edge.tau, is_goal)
        self.tree.nodes.append(node)
        self.tree.index.add(node.state)
        parent.children.add(nid)
        if is_goal:
            self.tree.goal_ids.append(nid)
            self.stats.goal_connections += 1
        return nid

    def radius(self) -> float:
        return near_radius(len(self.tree.nodes), self.n_dim, self.diagonal)

    def _candidates(self, x) -> list[int]:
        near = [i for i in near_set(self.tree, x, self.radius())
                if not self.tree.nodes[i].is_goal]
        if not near:
            d = self.tree.index.distances(x)
            d[[i for i, nd in enumerate(self.tree.nodes) if nd.is_goal]] = np.inf
            near = [int(np.argmin(d))]
        return near[: self.max_neighbors]

    def extend(self, x_i, is_goal: bool = False) -> int | None:
        """Attach ``x_i`` below the parent minimising the combined cost."""
        cands = self._candidates(x_i)
        cands.sort(key=lambda i: (self._lower_bound(self.tree.nodes[i], x_i), i))
        best = None
        for pid in cands:
            parent = self.tree.nodes[pid]
            if best is not None and self._lower_bound(parent, x_i) >= best[0]:
                break
            edge = self.connect(parent.state, x_i)
            if edge is None:
                self.stats.rejected_edges += 1
                continue
            rob = self._monitor(parent, edge)
            cost = self._edge_total(parent, edge, rob)
            if best is None or cost < best[0]:
                best = (cost, pid, edge, rob)
        if best is None:
            self.stats.discarded_samples += 1
            return None
        cost, pid, edge, rob = best
        return self._add_node(x_i, pid, edge, rob, cost, is_goal)

    def _trial_subtree(self, node_id: int, new_parent: TreeNode, edge, rob, cost):
        """New (robustness, cost) for ``node_id`` and its subtree, or ``None``
        when some descendant would get more expensive or lose satisfaction."""
        nodes = self.tree.nodes
        updates = {node_id: (rob, cost, new_parent.control_cost + edge.control_cost,
                             new_parent.arrival_time + edge.tau)}
        for d in self.tree.descendants(node_id):
            nd = nodes[d]
            p_rob, p_cost, p_ctrl, p_time = updates[nd.parent]
            d_rob = update_robustness(self.formula, p_rob, nd.edge.states[1:, : self.pdim],
                                      self.rho_max)
            d_cost = p_cost + nd.edge.control_cost + self.mu2 * tltl_edge_cost(
                self.formula, p_rob, d_rob)
            if d_cost > nd.cost + 1e-9:
                return None
            if nd.is_goal and nd.robustness.root >= 0 > d_rob.root:
                return None
            updates[d] = (d_rob, d_cost, p_ctrl + nd.edge.control_cost, p_time + nd.edge.tau)
        return updates

    def rewire(self, new_id: int) -> None:
        """Re-route near nodes through ``new_id`` where that is strictly cheaper."""
        nodes = self.tree.nodes
        xi = nodes[new_id]
        for nid in self._candidates(xi.state):
            node = nodes[nid]
            if nid == new_id or nid == xi.parent or node.parent is None or node.is_goal:
                continue
            if self._lower_bound(xi, node.state) >= node.cost:
                continue
            if self.tree.is_ancestor(nid, new_id):
                continue
            edge = self.connect(xi.state, node.state)
            if edge is None:
                self.stats.rejected_edges += 1
                continue
            rob = self._monitor(xi, edge)
            cost = self._edge_total(xi, edge, rob)
            if not cost < node.cost:
                continue
            updates = self._trial_subtree(nid, xi, edge, rob, cost)
            if updates is None:
                continue
            nodes[node.parent].children.discard(nid)
            node.parent = new_id
            node.edge = edge
            xi.children.add(nid)
            for d, (d_rob, d_cost, d_ctrl, d_time) in updates.items():
                nd = nodes[d]
                nd.robustness, nd.cost, nd.control_cost, nd.arrival_time = d_rob, d_cost, d_ctrl, d_time
            self.stats.rewires += 1

    def _try_goal(self, from_id: int) -> None:
        node = self.tree.nodes[from_id]
        if np.linalg.norm(node.state - self.goal) >= self.radius():
            return
        edge = self.connect(node.state, self.goal)
        if edge is None:
            self.stats.rejected_edges += 1
            return
        rob = self._monitor(node, edge)
        self._add_node(self.goal, from_id, edge, rob, self._edge_total(node, edge, rob), True)

    # -- results ---------------------------------------------------------
    def _update_incumbent(self) -> None:
        nodes = self.tree.nodes
        for gid in self.tree.goal_ids:
            g = nodes[gid]
            if g.robustness.root >= 0 and (self._best is None or g.cost < self._best[0]):
                path = self.tree.path(gid)
                self._best = (g.cost, [nodes[i].edge for i in path[1:]], g.robustness)
        if self._best is not None:
            self._best_cost_history.append(self._best[0])

    def _result(self) -> PlanResult:
        self.stats.nodes = len(self.tree.nodes)
        if self._best is not None:
            cost, edges, rob = self._best
        else:
            goals = [self.tree.nodes[g] for g in self.tree.goal_ids]
            if not goals:
                return PlanResult(False, False, math.inf, -math.inf, None, None, None, [],
                                  None, self.stats, self.mode, self.tree)
            g = max(goals, key=lambda nd: (nd.robustness.root, -nd.cost, -nd.id))
            cost, rob = g.cost, g.robustness
            edges = [self.tree.nodes[i].edge for i in self.tree.path(g.id)[1:]]
        times, states, controls = concatenate_edges(edges)
        if self.mode == KINODYNAMIC:
            b = check_bounds(self.model, states, np.vstack([e.controls for e in edges]))
        else:
            order = self.model.n // self.model.m
            mass = getattr(self.scenario.model, "mass", 1.0)
            states, controls = implied_controls(times, states, order, mass)
            b = check_bounds(self.model, states, controls)
        satisfied = rob.root >= 0 and b.ok
        return PlanResult(True, satisfied, cost, rob.root, times, states, controls, edges, rob,
                          self.stats, self.mode, self.tree)

    @property
    def best_cost_history(self) -> list[float]:
        return list(self._best_cost_history)

    # -- consistency checks (test mode) ----------------------------------
    def check_consistency(self, tol: float = 1e-9) -> None:
        if not self.tree.is_tree():
            raise AssertionError("parent links do not form a tree")
        for node in self.tree.nodes[1:]:
            path = self.tree.path(node.id)
            rob = self.tree.nodes[0].robustness
            cost = 0.0
            for a, b in zip(path[:-1], path[1:]):
                e = self.tree.nodes[b].edge
                new = update_robustness(self.formula, rob, e.states[1:, : self.pdim], self.rho_max)
                cost += e.control_cost + self.mu2 * tltl_edge_cost(self.formula, rob, new)
                rob = new
            if abs(cost - node.cost) > tol * max(1.0, abs(cost)):
                raise AssertionError(f"node {node.id}: cost {node.cost} != recomputed {cost}")
            if rob.values != node.robustness.values:
                raise AssertionError(f"node {node.id}: stale robustness")
            if not np.array_equal(self.tree.index.points[node.id], node.state):
                raise AssertionError("spatial index out of sync")

    # -- main loop ---------------------------------------------------------
    def run(self) -> PlanResult:
        t_start = time.perf_counter()
        for it in range(self.iterations):
            if time.perf_counter() - t_start > self.time_budget:
                break
            x_i, is_goal = sample_free(self.rng, self.lower, self.upper, self.scenario,
                                       self.goal, self.goal_bias, self.inflation)
            if is_goal:
                self.extend(x_i, is_goal=True)
            else:
                nid = self.extend(x_i)
                if nid is not None:
                    self.rewire(nid)
                    self._try_goal(nid)
            self.stats.iterations = it + 1
            self._update_incumbent()
            if self.test_mode and (it + 1) % self.check_every == 0:
                self.check_consistency()
            if self.on_iteration is not None:
                self.on_iteration(self, it)
        self.stats.wall_time = time.perf_counter() - t_start
        if self.test_mode:
            self.check_consistency()
        res = self._result()
        log.info("%s/%s: %d iterations, %d nodes, satisfied=%s, cost=%.3f, rho=%.3f",
                 self.scenario.name, self.mode, self.stats.iterations, self.stats.nodes,
                 res.satisfied, res.total_cost, res.root_robustness)
        return res


def plan(scenario: Scenario, **kwargs) -> PlanResult:
    """Run the planner on ``scenario``; keyword arguments go to :class:`Planner`."""
    return Planner(scenario, **kwargs).run()
