"""Quadratic stage costs, relaxed tanh barriers, and the Gaussian observation model.

The stage cost ``c_t(tau) + sum_j c_in,j(tau)`` is written as a weighted
residual ``(z*_t - h(tau))^T Gamma_t (z*_t - h(tau))`` so that it can be used
as an observation likelihood ``N(z*_t | h(tau), (alpha Gamma_t)^-1)``.

``h`` stacks, in order: the state-control vector (state only at the terminal
time), any extra linear blocks on the state (e.g. formation keeping), and one
scalar barrier slot per inequality constraint.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la

from .errors import ValidationError


@dataclass(frozen=True)
class BarrierConstraint:
    """One inequality ``K(tau) > 0`` with a relaxed tanh barrier.

    ``func`` maps batched ``tau`` (``(..., n_tau)``) to ``K`` values (``(...)``);
    ``grad`` optionally returns ``dK/dtau`` with shape ``(..., n_tau)``. A
    ``state_only`` constraint is also enforced on the terminal state.
    """

    func: Callable
    weight: float = 1.0
    gamma: float = 1.0
    eps: float = 1.0
    grad: Optional[Callable] = None
    state_only: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.gamma > 0 or not self.eps > 0:
            raise ValidationError(f"barrier {self.name!r}: gamma and eps must be positive")
        if not self.weight >= 0:
            raise ValidationError(f"barrier {self.name!r}: weight must be non-negative")

    def value(self, tau):
        return np.asarray(self.func(np.asarray(tau, dtype=float)), dtype=float)

    def gradient(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.grad is not None:
            return np.asarray(self.grad(tau), dtype=float)
        n = tau.shape[-1]
        h = np.maximum(1e-6, 1e-6 * np.abs(tau))
        steps = h[..., None, :] * np.eye(n)
        plus = self.value(tau[..., None, :] + steps)
        minus = self.value(tau[..., None, :] - steps)
        return (plus - minus) / (2.0 * h)


def barrier_psi(c, tau):
    """Zero on the safe set ``K > 0``, ``gamma (1 - tanh(eps K))`` otherwise."""
    k = c.value(tau)
    return np.where(k > 0.0, 0.0, c.gamma * (1.0 - np.tanh(c.eps * np.minimum(k, 0.0))))


def barrier_psi_grad(c, tau):
    # unsafe-side derivative at K == 0
    k = c.value(tau)
    dpsi_dk = np.where(k > 0.0, 0.0, -c.gamma * c.eps / np.cosh(c.eps * np.minimum(k, 0.0)) ** 2)
    return dpsi_dk[..., None] * c.gradient(tau)


def constraint_cost(c, tau):
    psi = barrier_psi(c, tau)
    return c.weight * psi * psi


def obstacle_constraint(center, r_obs, r_s=0.0, xy_index=(0, 1), weight=1.0, gamma=1.0,
                        eps=1.0, name="obstacle"):
    """Keep the point ``tau[xy_index]`` outside a circle of radius ``r_obs + r_s``."""
    if r_obs < 0 or r_s < 0:
        raise ValidationError("obstacle and safety radii must be non-negative")
    cx, cy = float(center[0]), float(center[1])
    ix, iy = int(xy_index[0]), int(xy_index[1])
    rad2 = (float(r_obs) + float(r_s)) ** 2

    def func(tau):
        return (tau[..., ix] - cx) ** 2 + (tau[..., iy] - cy) ** 2 - rad2

    def grad(tau):
        g = np.zeros_like(tau)
        g[..., ix] = 2.0 * (tau[..., ix] - cx)
        g[..., iy] = 2.0 * (tau[..., iy] - cy)
        return g

    return BarrierConstraint(func, weight, gamma, eps, grad, state_only=True, name=name)


def box_constraint(index, lo, hi, weight=1.0, gamma=1.0, eps=1.0, name="box"):
    """Two one-sided barriers for ``lo < tau[index] < hi``.

    ``index`` addresses the state-control vector, so control ``p`` of a model
    with ``n_x`` states sits at ``n_x + p``.
    """
    if not lo < hi:
        raise ValidationError(f"{name}: lower limit {lo} must be below upper limit {hi}")
    index = int(index)

    def lower(tau):
        return tau[..., index] - lo

    def upper(tau):
        return hi - tau[..., index]

    def unit(sign):
        def grad(tau):
            g = np.zeros_like(tau)
            g[..., index] = sign
            return g
        return grad

    return (
        BarrierConstraint(lower, weight, gamma, eps, unit(1.0), name=f"{name}_lo"),
        BarrierConstraint(upper, weight, gamma, eps, unit(-1.0), name=f"{name}_hi"),
    )


@dataclass(frozen=True)
class QuadraticStageCost:
    """Quadratic tracking cost with running (Q, R) and terminal (Q_T) weights.

    Targets are either constant vectors or per-time arrays (``(T+1, n_x)`` for
    states, ``(T, n_u)`` for controls).
    """

    Q: np.ndarray
    R: np.ndarray
    Q_T: np.ndarray
    x_target: np.ndarray
    u_target: np.ndarray

    def __post_init__(self):
        for key in ("Q", "R", "Q_T", "x_target", "u_target"):
            object.__setattr__(self, key, np.asarray(getattr(self, key), dtype=float))
        n_x, n_u = self.Q.shape[0], self.R.shape[0]
        for key in ("Q", "R", "Q_T"):
            m = getattr(self, key)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValidationError(f"{key} must be square")
            if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-10 * max(1.0, np.abs(m).max()):
                raise ValidationError(f"{key} must be positive semi-definite")
        if self.Q_T.shape != self.Q.shape:
            raise ValidationError("Q_T must match Q")
        if self.x_target.shape[-1] != n_x or self.u_target.shape[-1] != n_u:
            raise ValidationError("target dimensions do not match cost matrices")

    @property
    def n_x(self):
        return self.Q.shape[0]

    @property
    def n_u(self):
        return self.R.shape[0]

    def x_ref(self, t):
        return self.x_target if self.x_target.ndim == 1 else self.x_target[t]

    def u_ref(self, t):
        return self.u_target if self.u_target.ndim == 1 else self.u_target[t]


@dataclass(frozen=True)
class LinearBlock:
    """Extra quadratic observation ``(G x - target)^T W (G x - target)`` on the state."""

    G: np.ndarray
    target: np.ndarray
    weight: np.ndarray
    name: str = "block"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        target = np.asarray(self.target, dtype=float).reshape(-1)
        weight = np.asarray(self.weight, dtype=float)
        if weight.ndim == 0:
            weight = weight * np.eye(G.shape[0])
        if target.size != G.shape[0] or weight.shape != (G.shape[0], G.shape[0]):
            raise ValidationError(f"{self.name}: dimension mismatch")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "weight", weight)


def formation_block(B_inc, delta_star, Q_f, n_x_agent=3):
    """Formation penalty on stacked agent states as a :class:`LinearBlock`."""
    B_inc = np.atleast_2d(np.asarray(B_inc, dtype=float))
    if not np.allclose(B_inc.sum(axis=0), 0.0):
        raise ValidationError("incidence matrix columns must sum to zero")
    G = np.kron(B_inc, np.eye(n_x_agent)).T
    return LinearBlock(G, delta_star, Q_f, name="formation")


def formation_cost(B_inc, delta_star, Q_f, X):
    blk = formation_block(B_inc, delta_star, Q_f, np.asarray(X).shape[-1] // np.shape(B_inc)[0])
    if blk.G.shape[1] != np.shape(X)[-1]:
        raise ValidationError("joint state does not match incidence matrix")
    r = np.asarray(X, dtype=float) @ blk.G.T - blk.target
    return np.einsum("...i,ij,...j->...", r, blk.weight, r)


def incidence_matrix(n_nodes, edges):
    """Node-by-edge incidence with ``+1`` at the first node of each pair, ``-1`` at the second."""
    B = np.zeros((n_nodes, len(edges)))
    for e, (a, b) in enumerate(edges):
        B[a - 1, e] = 1.0
        B[b - 1, e] = -1.0
    return B


@dataclass(frozen=True)
class ObservationSpec:
    """Cost-as-likelihood observation model over a horizon of ``T`` steps."""

    cost: QuadraticStageCost
    horizon: int
    constraints: tuple = ()
    blocks: tuple = ()
    alpha: float = 1.0
    terminal_blocks: bool = True
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        for b in self.blocks:
            if b.G.shape[1] != self.cost.n_x:
                raise ValidationError(f"block {b.name!r} does not act on a {self.cost.n_x}-dim state")

    @property
    def n_x(self):
        return self.cost.n_x

    @property
    def n_u(self):
        return self.cost.n_u

    def terminal_constraints(self):
        return tuple(c for c in self.constraints if c.state_only)

    def _terminal_block_list(self):
        return self.blocks if self.terminal_blocks else ()

    def dim(self, t):
        if t < self.horizon:
            return self.n_x + self.n_u + sum(b.G.shape[0] for b in self.blocks) + len(self.constraints)
        return (self.n_x + sum(b.G.shape[0] for b in self._terminal_block_list())
                + len(self.terminal_constraints()))

    def target(self, t):
        if t < self.horizon:
            parts = [self.cost.x_ref(t), self.cost.u_ref(t)]
            parts += [b.target for b in self.blocks]
            parts.append(np.zeros(len(self.constraints)))
        else:
            parts = [self.cost.x_ref(t)]
            parts += [b.target for b in self._terminal_block_list()]
            parts.append(np.zeros(len(self.terminal_constraints())))
        return np.concatenate(parts)

    def weight(self, t):
        """``Gamma_t`` (without the scale ``alpha``)."""
        terminal = t >= self.horizon
        key = ("W", terminal)
        if key not in self._cache:
            if terminal:
                mats = [self.cost.Q_T] + [b.weight for b in self._terminal_block_list()]
                mats += [np.atleast_2d(c.weight) for c in self.terminal_constraints()]
            else:
                mats = [self.cost.Q, self.cost.R] + [b.weight for b in self.blocks]
                mats += [np.atleast_2d(c.weight) for c in self.constraints]
            self._cache[key] = la.block_diag(*mats)
        return self._cache[key]

    def h(self, v, t):
        """Observation function; ``v`` is ``tau`` for ``t < T`` and ``x_T`` at ``t == T``."""
        v = np.asarray(v, dtype=float)
        x = v[..., : self.n_x]
        if t < self.horizon:
            parts = [v] + [x @ b.G.T for b in self.blocks]
            cons = self.constraints
        else:
            parts = [x] + [x @ b.G.T for b in self._terminal_block_list()]
            cons = self.terminal_constraints()
        if cons:
            tau = v if t < self.horizon else self._pad(v)
            parts.append(np.stack([barrier_psi(c, tau) for c in cons], axis=-1))
        return np.concatenate(parts, axis=-1)

    def h_jacobian(self, v, t):
        """``dh/dv`` with the unsafe-side barrier derivative at the boundary."""
        v = np.asarray(v, dtype=float)
        n = v.shape[-1]
        batch = v.shape[:-1]
        if t < self.horizon:
            blocks, cons = self.blocks, self.constraints
        else:
            blocks, cons = self._terminal_block_list(), self.terminal_constraints()
        rows = [np.broadcast_to(np.eye(n), batch + (n, n))]
        for b in blocks:
            G = np.zeros((b.G.shape[0], n))
            G[:, : self.n_x] = b.G
            rows.append(np.broadcast_to(G, batch + G.shape))
        if cons:
            tau = v if t < self.horizon else self._pad(v)
            grads = np.stack([barrier_psi_grad(c, tau)[..., :n] for c in cons], axis=-2)
            rows.append(grads)
        return np.concatenate(rows, axis=-2)

    def _pad(self, x):
        # terminal constraints only read the state part of tau
        return np.concatenate([x, np.zeros(x.shape[:-1] + (self.n_u,))], axis=-1)


def observe(spec, tau, t=0):
    """Return ``(h(tau), z*_t - h(tau))``; at ``t == T`` pass the terminal state."""
    h = spec.h(tau, t)
    return h, spec.target(t) - h


def stage_cost(spec, tau, t=0):
    """Stage cost including barrier terms; at ``t == T`` this is the terminal cost."""
    _, r = observe(spec, tau, t)
    return np.einsum("...i,ij,...j->...", r, spec.weight(t), r)


def trajectory_cost(spec, xs, us):
    """Total cost of a realized trajectory ``xs`` (T+1 states), ``us`` (T controls)."""
    T = spec.horizon
    taus = np.concatenate([xs[:T], us], axis=-1)
    running = sum(float(stage_cost(spec, taus[t], t)) for t in range(T))
    return running + float(stage_cost(spec, xs[T], T))


def constraint_values(spec, tau, t=0):
    """Raw ``K_j`` values for the constraints active at time ``t``."""
    cons = spec.constraints if t < spec.horizon else spec.terminal_constraints()
    if t >= spec.horizon:
        tau = spec._pad(np.asarray(tau, dtype=float))
    return np.array([float(c.value(tau)) for c in cons])
