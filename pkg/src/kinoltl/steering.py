"""Optimal steering between two states of a linear system.

Fixed-final-state, free-final-time minimum effort control: the Gramian and
free response come from block matrix exponentials, the arrival time from
the stationarity condition of the time-dependent cost, and the trajectory
from the joint state/costate exponential integrated back from the goal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq

from .dynamics import LinearizedSystem, check_bounds

__all__ = [
    "SteeringError",
    "SteeringEdge",
    "gramian",
    "free_evolution",
    "steer_fixed_time",
    "arrival_cost",
    "arrival_cost_rate",
    "optimal_arrival_time",
    "steer",
    "COND_LIMIT",
    "DEFAULT_DT",
]

COND_LIMIT = 1e12
DEFAULT_DT = 0.05
TAU_MIN = 1e-3
N_GRID = 64
_HORIZON_MEMO = 4096


class SteeringError(RuntimeError):
    """No admissible optimal edge between the requested states."""


def _horizon(sys: LinearizedSystem, tau: float):
    """``(exp(A tau), int_0^tau exp(A s) d ds, G(0, tau))`` for one horizon."""
    memo = sys.cache.setdefault("horizon", {})
    hit = memo.get(tau)
    if hit is not None:
        return hit
    n = sys.n
    # block-diagonal: Van Loan block for the Gramian, augmented block for the drift
    M = np.zeros((3 * n + 1, 3 * n + 1))
    M[:n, :n] = -sys.A
    M[:n, n:2 * n] = sys.BRB
    M[n:2 * n, n:2 * n] = sys.A.T
    M[2 * n:3 * n, 2 * n:3 * n] = sys.A
    M[2 * n:3 * n, 3 * n] = sys.d
    E = expm(M * tau)
    F = E[n:2 * n, n:2 * n]
    G = F.T @ E[:n, n:2 * n]
    G = 0.5 * (G + G.T)
    Phi = E[2 * n:3 * n, 2 * n:3 * n]
    w = E[2 * n:3 * n, 3 * n]
    out = (Phi, w, G)
    if len(memo) < _HORIZON_MEMO:
        memo[tau] = out
    return out


def gramian(sys: LinearizedSystem, tau: float) -> np.ndarray:
    """Weighted controllability Gramian ``int_0^tau e^{A(tau-s)} B R^-1 B^T e^{A^T(tau-s)} ds``."""
    if tau < 0:
        raise ValueError("horizon must be nonnegative")
    if tau == 0:
        return np.zeros((sys.n, sys.n))
    return _horizon(sys, float(tau))[2].copy()


def free_evolution(sys: LinearizedSystem, x0, tau: float) -> np.ndarray:
    """State reached from ``x0`` after ``tau`` seconds with zero input."""
    if tau < 0:
        raise ValueError("horizon must be nonnegative")
    x0 = np.asarray(x0, float)
    if tau == 0:
        return x0.copy()
    Phi, w, _ = _horizon(sys, float(tau))
    return Phi @ x0 + w


def _solve_residual(sys, x0, x1, tau):
    Phi, w, G = _horizon(sys, float(tau))
    if not np.all(np.isfinite(G)) or np.linalg.cond(G) > COND_LIMIT:
        raise SteeringError(f"ill-conditioned Gramian at tau={tau:.4g}")
    r = np.asarray(x1, float) - (Phi @ np.asarray(x0, float) + w)
    return r, np.linalg.solve(G, r)


def arrival_cost(sys, x0, x1, tau, mu1=1.0) -> float:
    """``mu1 (tau + r^T G^-1 r)`` with ``r`` the residual to the free response."""
    r, e = _solve_residual(sys, x0, x1, tau)
    return mu1 * (tau + float(r @ e))


def arrival_cost_rate(sys, x0, x1, tau, mu1=1.0) -> float:
    """Time derivative of :func:`arrival_cost`."""
    _, e = _solve_residual(sys, x0, x1, tau)
    x1 = np.asarray(x1, float)
    drift = sys.A @ x1 + sys.d
    return mu1 * (1.0 - 2.0 * float(drift @ e) - float(e @ sys.BRB @ e))


@dataclass
class SteeringEdge:
    """Optimal connection ``x0 -> x1`` sampled on a uniform time grid.

    ``e`` is the Gramian-weighted residual; the costate is
    ``y(t) = mu1 exp(A^T (tau - t)) e`` so that ``u = R^-1 B^T y / mu1``.
    ``control_cost`` is ``mu1 * int (1 + u^T R u / 2) dt``.
    """

    x0: np.ndarray
    x1: np.ndarray
    tau: float
    mu1: float
    e: np.ndarray
    times: np.ndarray
    states: np.ndarray
    costates: np.ndarray
    controls: np.ndarray
    effort: float
    control_cost: float
    max_input_excess: float = 0.0
    max_state_excess: float = 0.0
    sys: LinearizedSystem | None = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.max_input_excess == 0.0 and self.max_state_excess == 0.0

    def _joint(self):
        return _joint_matrix(self.sys, self.mu1)

    def state_at(self, t: float) -> np.ndarray:
        n = self.sys.n
        z = np.concatenate([self.x1, self.mu1 * self.e, [1.0]])
        return (expm(self._joint() * (t - self.tau)) @ z)[:n]

    def costate_at(self, t: float) -> np.ndarray:
        return self.mu1 * expm(self.sys.A.T * (self.tau - t)) @ self.e

    def control_at(self, t: float) -> np.ndarray:
        return self.sys.R_inv @ self.sys.B.T @ self.costate_at(t) / self.mu1


def _joint_matrix(sys: LinearizedSystem, mu1: float) -> np.ndarray:
    key = ("joint", mu1)
    M = sys.cache.get(key)
    if M is None:
        n = sys.n
        M = np.zeros((2 * n + 1, 2 * n + 1))
        M[:n, :n] = sys.A
        M[:n, n:2 * n] = sys.BRB / mu1
        M[:n, 2 * n] = sys.d
        M[n:2 * n, n:2 * n] = -sys.A.T
        sys.cache[key] = M
    return M


def _step_matrix(sys: LinearizedSystem, mu1: float, h: float) -> np.ndarray:
    memo = sys.cache.setdefault("step", {})
    key = (mu1, h)
    S = memo.get(key)
    if S is None:
        S = expm(-_joint_matrix(sys, mu1) * h)
        if len(memo) < _HORIZON_MEMO:
            memo[key] = S
    return S


def steer_fixed_time(sys: LinearizedSystem, x0, x1, tau: float, mu1: float = 1.0,
                     dt: float = DEFAULT_DT) -> SteeringEdge:
    """Minimum-effort control reaching ``x1`` exactly at ``tau``."""
    if not tau > 0:
        raise SteeringError("arrival time must be positive")
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    r, e = _solve_residual(sys, x0, x1, tau)
    n = sys.n
    steps = max(1, math.ceil(tau / dt - 1e-9))
    h = tau / steps
    S = _step_matrix(sys, mu1, h)
    Z = np.empty((steps + 1, 2 * n + 1))
    z = np.concatenate([x1, mu1 * e, [1.0]])
    Z[steps] = z
    for k in range(steps - 1, -1, -1):
        z = S @ z
        Z[k] = z
    states = Z[:, :n]
    costates = Z[:, n:2 * n]
    controls = costates @ (sys.R_inv @ sys.B.T).T / mu1
    effort = float(r @ e)
    return SteeringEdge(
        x0=x0, x1=x1, tau=float(tau), mu1=mu1, e=e,
        times=np.linspace(0.0, tau, steps + 1),
        states=states, costates=costates, controls=controls,
        effort=effort, control_cost=mu1 * (tau + 0.5 * effort), sys=sys,
    )


def _grid(sys: LinearizedSystem, tau_min: float, tau_max: float, n_grid: int):
    key = ("grid", tau_min, tau_max, n_grid)
    g = sys.cache.get(key)
    if g is not None:
        return g
    taus = np.geomspace(tau_min, tau_max, n_grid)
    n = sys.n
    Phi = np.empty((n_grid, n, n))
    w = np.empty((n_grid, n))
    Ginv = np.zeros((n_grid, n, n))
    ok = np.zeros(n_grid, bool)
    for i, t in enumerate(taus):
        Phi[i], w[i], G = _horizon(sys, float(t))
        if np.all(np.isfinite(G)) and np.linalg.cond(G) < COND_LIMIT:
            Ginv[i] = np.linalg.inv(G)
            ok[i] = True
    g = (taus, Phi, w, Ginv, ok)
    sys.cache[key] = g
    return g


def optimal_arrival_time(sys: LinearizedSystem, x0, x1, mu1: float = 1.0, *,
                         tau_min: float = TAU_MIN, tau_max: float = 100.0,
                         n_grid: int = N_GRID) -> float:
    """Arrival time minimising :func:`arrival_cost`.

    Scans a geometric grid for sign changes of the cost rate, refines every
    bracketed root and returns the cheapest stationary point, falling back
    to the cheapest grid point.  Ties go to the shorter time.
    """
    x0 = np.asarray(x0, float)
    x1 = np.asarray(x1, float)
    if np.allclose(x0, x1, rtol=0, atol=1e-12) and not np.any(sys.d):
        raise SteeringError("identical endpoints without drift")
    taus, Phi, w, Ginv, ok = _grid(sys, tau_min, tau_max, n_grid)
    r = x1 - (Phi @ x0 + w)
    e = np.einsum("kij,kj->ki", Ginv, r)
    cost = mu1 * (taus + np.einsum("ki,ki->k", r, e))
    drift = sys.A @ x1 + sys.d
    rate = mu1 * (1.0 - 2.0 * (e @ drift) - np.einsum("ki,ij,kj->k", e, sys.BRB, e))
    cost[~ok] = np.inf
    if not np.any(np.isfinite(cost)):
        raise SteeringError("no finite-cost arrival time in range")

    candidates = []
    k = int(np.argmin(cost))
    candidates.append((float(cost[k]), float(taus[k])))
    f = lambda t: arrival_cost_rate(sys, x0, x1, t, mu1)  # noqa: E731
    for i in range(n_grid - 1):
        if not (ok[i] and ok[i + 1]):
            continue
        a, b = rate[i], rate[i + 1]
        if a == 0.0:
            root = float(taus[i])
        elif a * b < 0:
            root = brentq(f, taus[i], taus[i + 1], xtol=1e-14, rtol=1e-10)
        else:
            continue
        candidates.append((arrival_cost(sys, x0, x1, root, mu1), root))
    best = min(candidates)
    return best[1]


def _excess(sys, x0, x1, tau, mu1, steps=32):
    try:
        edge = steer_fixed_time(sys, x0, x1, tau, mu1, dt=tau / steps)
    except SteeringError:
        return math.inf
    b = check_bounds(sys, edge.states, edge.controls)
    return max(b.state_excess, b.input_excess)


def _overshoot(sys, edge) -> float:
    """Largest ratio of a sampled magnitude to the bound it violates."""
    ratio = 1.0
    for vals, lo, hi in ((edge.controls, sys.input_lower, sys.input_upper),
                         (edge.states, sys.state_lower, sys.state_upper)):
        for bound, peak in ((hi, vals.max(axis=0)), (-lo, -vals.min(axis=0))):
            mask = (peak > bound) & (bound > 0)
            if np.any(mask):
                ratio = max(ratio, float(np.max(peak[mask] / bound[mask])))
    return ratio


def _feasible_time(sys, x0, x1, edge, mu1, dt, tau_max, growth=1.5, rtol=1e-3):
    """Shortest arrival time above ``edge.tau`` whose edge respects the bounds.

    Input peaks shrink at least like ``1 / tau`` for integrator chains, so
    ``tau * overshoot`` is tried first; the bracket is then bisected
    geometrically down to ``rtol``.
    """
    tau = edge.tau
    lo, hi = tau, None
    t = min(tau * max(_overshoot(sys, edge) * (1.0 + 1e-9), 1.0 + rtol), tau_max)
    while True:
        if _excess(sys, x0, x1, t, mu1) == 0.0:
            hi = t
            break
        lo = t
        if t >= tau_max:
            break
        t = min(t * growth, tau_max)
    if hi is None:
        return None
    probe = hi / (1.0 + rtol)
    if probe > lo and _excess(sys, x0, x1, probe, mu1) == 0.0:
        hi = probe
        while hi / lo > 1.0 + rtol:
            mid = math.sqrt(lo * hi)
            if _excess(sys, x0, x1, mid, mu1) == 0.0:
                hi = mid
            else:
                lo = mid
    for _ in range(40):
        out = steer_fixed_time(sys, x0, x1, hi, mu1, dt)
        b = check_bounds(sys, out.states, out.controls)
        if b.ok:
            out.max_input_excess, out.max_state_excess = 0.0, 0.0
            return out
        hi *= 1.002
    return None


def steer(sys: LinearizedSystem, x0, x1, mu1: float = 1.0, *, dt: float = DEFAULT_DT,
          tau_min: float = TAU_MIN, tau_max: float = 100.0,
          stretch_to_bounds: bool = False) -> SteeringEdge:
    """Optimal arrival time followed by the fixed-time optimal edge.

    Bound violations are recorded on the edge.  With
    ``stretch_to_bounds`` an infeasible edge is replaced by the same optimal
    control law at the shortest longer arrival time that respects the state
    and input boxes, when one exists below ``tau_max``.
    """
    tau = optimal_arrival_time(sys, x0, x1, mu1, tau_min=tau_min, tau_max=tau_max)
    edge = steer_fixed_time(sys, x0, x1, tau, mu1, dt)
    b = check_bounds(sys, edge.states, edge.controls)
    edge.max_input_excess, edge.max_state_excess = b.input_excess, b.state_excess
    if b.ok or not stretch_to_bounds:
        return edge
    stretched = _feasible_time(sys, x0, x1, edge, mu1, dt, tau_max)
    return edge if stretched is None else stretched
