"""System models, their linearisation, bounds checks and an RK4 oracle."""
from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

__all__ = [
    "SystemModel",
    "LinearizedSystem",
    "BoundsCheck",
    "linearize",
    "integrate_ode",
    "check_bounds",
    "controllability_matrix",
    "single_integrator",
    "double_integrator",
    "custom_model",
    "FD_STEP",
]

FD_STEP = 1e-6


def _vec(x, n=None) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if n is not None and a.shape != (n,):
        raise ValueError(f"expected vector of length {n}, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Continuous-time model ``xdot = f(x, u)`` with box bounds.

    The first ``position_dims`` state components are workspace coordinates;
    region predicates and obstacle checks only look at those.
    """

    name: str
    n: int
    m: int
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    R: np.ndarray
    position_dims: int
    max_speed: float
    jacobian: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None
    is_linear: bool = False

    def __post_init__(self):
        for attr, size in (("state_lower", self.n), ("state_upper", self.n),
                           ("input_lower", self.m), ("input_upper", self.m)):
            object.__setattr__(self, attr, _vec(getattr(self, attr), size))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (self.m, self.m):
            raise ValueError(f"R must be {self.m}x{self.m}")
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "R", R)
        if np.any(self.state_lower > self.state_upper) or np.any(self.input_lower > self.input_upper):
            raise ValueError("empty bounds box")
        if not 0 < self.position_dims <= self.n:
            raise ValueError("position_dims out of range")

    def f(self, x, u) -> np.ndarray:
        return np.asarray(self.dynamics(np.asarray(x, float), np.asarray(u, float)), dtype=float)

    @property
    def input_bound(self) -> float:
        """Largest magnitude allowed on any input component."""
        return float(max(np.abs(self.input_lower).max(), np.abs(self.input_upper).max()))


@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    """``xdot = A x + B u + d`` together with the bounds and weight of its model."""

    A: np.ndarray
    B: np.ndarray
    d: np.ndarray
    R: np.ndarray
    state_lower: np.ndarray
    state_upper: np.ndarray
    input_lower: np.ndarray
    input_upper: np.ndarray
    x_hat: np.ndarray | None = None
    u_hat: np.ndarray | None = None
    # per-system memo used by the steering code
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        B = np.asarray(self.B, float).reshape(A.shape[0], -1)
        for name, val in (("A", A), ("B", B)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        n, m = B.shape
        object.__setattr__(self, "d", _vec(self.d, n))
        R = np.atleast_2d(np.asarray(self.R, float))
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        for attr, size in (("state_lower", n), ("state_upper", n),
                           ("input_lower", m), ("input_upper", m)):
            object.__setattr__(self, attr, _vec(getattr(self, attr), size))
        Rinv = np.linalg.inv(R)
        BRB = B @ Rinv @ B.T
        for arr in (Rinv, BRB):
            arr.setflags(write=False)
        object.__setattr__(self, "R_inv", Rinv)
        object.__setattr__(self, "BRB", 0.5 * (BRB + BRB.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def rhs(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u + self.d

    @classmethod
    def from_matrices(cls, A, B, d=None, R=None, *, state_bound=np.inf, input_bound=np.inf):
        A = np.atleast_2d(np.asarray(A, float))
        B = np.asarray(B, float).reshape(A.shape[0], -1)
        n, m = B.shape
        d = np.zeros(n) if d is None else d
        R = np.eye(m) if R is None else R
        sb = np.broadcast_to(np.asarray(state_bound, float), (n,))
        ib = np.broadcast_to(np.asarray(input_bound, float), (m,))
        return cls(A, B, d, R, -sb, sb, -ib, ib)


def _numeric_jacobians(model: SystemModel, x, u, h=FD_STEP):
    n, m = model.n, model.m
    A = np.empty((n, n))
    B = np.empty((n, m))
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        A[:, j] = (model.f(x + dx, u) - model.f(x - dx, u)) / (2 * h)
    for j in range(m):
        du = np.zeros(m)
        du[j] = h
        B[:, j] = (model.f(x, u + du) - model.f(x, u - du)) / (2 * h)
    return A, B


def linearize(model: SystemModel, x_hat, u_hat=None) -> LinearizedSystem:
    """First-order expansion of ``model`` about ``(x_hat, u_hat)``.

    Analytic Jacobians are used when the model provides them, central
    differences otherwise.
    """
    x_hat = np.asarray(x_hat, float)
    u_hat = np.zeros(model.m) if u_hat is None else np.asarray(u_hat, float)
    if model.jacobian is not None:
        A, B = (np.asarray(M, float) for M in model.jacobian(x_hat, u_hat))
    else:
        A, B = _numeric_jacobians(model, x_hat, u_hat)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError(f"non-finite Jacobian for {model.name} at {x_hat}")
    d = model.f(x_hat, u_hat) - A @ x_hat - B @ u_hat
    return LinearizedSystem(
        A, B, d, model.R,
        model.state_lower, model.state_upper, model.input_lower, model.input_upper,
        x_hat=_vec(x_hat), u_hat=_vec(u_hat),
    )


def controllability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    blocks, M = [], B
    for _ in range(A.shape[0]):
        blocks.append(M)
        M = A @ M
    return np.hstack(blocks)


def integrate_ode(sys: LinearizedSystem, x0, u, tau: float, dt: float):
    """Fixed-step classical RK4 for ``xdot = A x + B u(t) + d``.

    ``u`` is a callable of time or a constant input vector.  The step is
    shrunk so that the grid lands exactly on ``tau``.  Returns
    ``(times, states)``.
    """
    if tau <= 0 or dt <= 0:
        raise ValueError("tau and dt must be positive")
    if not callable(u):
        u_const = np.asarray(u, float)
        u = lambda t: u_const  # noqa: E731
    steps = max(1, int(np.ceil(tau / dt - 1e-9)))
    h = tau / steps
    times = np.linspace(0.0, tau, steps + 1)
    X = np.empty((steps + 1, sys.n))
    x = np.asarray(x0, float).copy()
    X[0] = x
    f = lambda t, x: sys.rhs(x, np.asarray(u(t), float))  # noqa: E731
    for k in range(steps):
        t = times[k]
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"integration diverged at t={times[k + 1]:.4g}")
        X[k + 1] = x
    return times, X


class BoundsCheck(NamedTuple):
    ok: bool
    state_excess: float
    input_excess: float


def check_bounds(sys, traj, controls) -> BoundsCheck:
    """Worst violation of the state and input boxes (0 when satisfied)."""
    X = np.atleast_2d(np.asarray(traj, float))
    U = np.atleast_2d(np.asarray(controls, float))
    sx = max(0.0, float(np.max(X - sys.state_upper)), float(np.max(sys.state_lower - X)))
    su = max(0.0, float(np.max(U - sys.input_upper)), float(np.max(sys.input_lower - U)))
    return BoundsCheck(sx == 0.0 and su == 0.0, sx, su)


# --------------------------------------------------------------------------
# shipped models


def single_integrator(lower, upper, speed: float = 0.22, R=None) -> SystemModel:
    """Omnidirectional robot with velocity inputs, ``xdot = u``."""
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    k = len(lower)
    A = np.zeros((k, k))
    B = np.eye(k)
    return SystemModel(
        name=f"single-integrator-{k}d",
        n=k, m=k,
        dynamics=lambda x, u: u,
        state_lower=lower, state_upper=upper,
        input_lower=-speed * np.ones(k), input_upper=speed * np.ones(k),
        R=np.eye(k) if R is None else R,
        position_dims=k,
        max_speed=speed,
        jacobian=lambda x, u: (A, B),
        is_linear=True,
    )


def double_integrator(lower, upper, *, thrust: float = 5.0, velocity: float = 1.0,
                      mass: float = 1.0, R=None, dim: int | None = None) -> SystemModel:
    """Per-axis point mass; state is positions then velocities, input is force.

    ``lower``/``upper`` bound the positions, or the full state when ``dim``
    is given and they have ``2 * dim`` entries.
    """
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    k = dim if dim is not None else len(lower)
    A = np.zeros((2 * k, 2 * k))
    A[:k, k:] = np.eye(k)
    B = np.zeros((2 * k, k))
    B[k:, :] = np.eye(k) / mass
    if len(lower) == 2 * k:
        lo, hi = lower, upper
    else:
        lo = np.concatenate([lower, -velocity * np.ones(k)])
        hi = np.concatenate([upper, velocity * np.ones(k)])
    return SystemModel(
        name=f"double-integrator-{k}d",
        n=2 * k, m=k,
        dynamics=lambda x, u: A @ x + B @ u,
        state_lower=lo, state_upper=hi,
        input_lower=-thrust * np.ones(k), input_upper=thrust * np.ones(k),
        R=np.eye(k) if R is None else R,
        position_dims=k,
        max_speed=velocity,
        jacobian=lambda x, u: (A, B),
        is_linear=True,
    )


def custom_model(target: str, *, state_lower, state_upper, input_lower, input_upper,
                 R=None, position_dims: int, max_speed: float) -> SystemModel:
    """Model whose ``f(x, u)`` is imported from ``"package.module:function"``."""
    module, _, attr = target.partition(":")
    if not attr:
        raise ValueError("custom dynamics must be given as 'module:function'")
    fn = getattr(importlib.import_module(module), attr)
    n = len(state_lower)
    m = len(input_lower)
    return SystemModel(
        name="custom", n=n, m=m, dynamics=fn,
        state_lower=state_lower, state_upper=state_upper,
        input_lower=input_lower, input_upper=input_upper,
        R=np.eye(m) if R is None else R,
        position_dims=position_dims, max_speed=max_speed,
    )
