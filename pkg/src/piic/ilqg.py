"""Iterative LQG baseline on the same barrier-augmented cost.

The stage cost is the weighted residual ``r^T Gamma r`` of the observation
model, quadratized in Gauss-Newton form (``2 J^T Gamma J``): exact for the
quadratic terms, and it drops the barrier second derivatives so the Hessians
stay positive semi-definite.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import NumericalError
from .gaussian import symmetrize
from .objective import trajectory_cost

REG_LADDER = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)


@dataclass(frozen=True)
class AffinePolicy:
    """``u_t = u_nom_t + K_t (x - x_nom_t)``."""

    K: np.ndarray
    x_nom: np.ndarray
    u_nom: np.ndarray

    @property
    def horizon(self):
        return self.K.shape[0]

    @property
    def k(self):
        """Offsets of the equivalent law ``u = K_t x + k_t``."""
        return self.u_nom - np.einsum("tux,tx->tu", self.K, self.x_nom[:-1])

    def control(self, x, t):
        return self.u_nom[t] + self.K[t] @ (x - self.x_nom[t])


@dataclass(frozen=True)
class IlqgOptions:
    max_iter: int = 200
    tol: float = 1e-9
    line_search: tuple = tuple(0.5 ** i for i in range(11))
    reg_ladder: tuple = REG_LADDER


@dataclass
class IlqgResult:
    policy: AffinePolicy
    costs: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    flagged: bool = False


def _rollout(model, x0, x_nom, u_nom, K, kff, step):
    T = u_nom.shape[0]
    X = np.empty_like(x_nom)
    U = np.empty_like(u_nom)
    X[0] = x0
    for t in range(T):
        U[t] = u_nom[t] + step * kff[t] + K[t] @ (X[t] - x_nom[t])
        X[t + 1] = model.step_mean(np.concatenate([X[t], U[t]]))
    return X, U


def _quadratize(spec, X, U):
    T = spec.horizon
    tau = np.concatenate([X[:T], U], axis=-1)
    W, WT = spec.weight(0), spec.weight(T)
    r = np.stack([spec.target(t) for t in range(T)]) - spec.h(tau, 0)
    J = spec.h_jacobian(tau, 0)
    grad = -2.0 * np.einsum("tji,jk,tk->ti", J, W, r)
    hess = 2.0 * np.einsum("tji,jk,tkl->til", J, W, J)
    rT = spec.target(T) - spec.h(X[T], T)
    JT = spec.h_jacobian(X[T], T)
    return grad, hess, -2.0 * JT.T @ WT @ rT, 2.0 * JT.T @ WT @ JT


def _backward(model, spec, X, U, reg_ladder):
    T, n_x = spec.horizon, model.n_x
    tau = np.concatenate([X[:T], U], axis=-1)
    jac = model.jacobian(tau)
    l, L, Vx, Vxx = _quadratize(spec, X, U)
    K = np.empty((T, model.n_u, n_x))
    kff = np.empty((T, model.n_u))
    for t in range(T - 1, -1, -1):
        F = jac[t]
        Qt = l[t] + F.T @ Vx
        Qtt = symmetrize(L[t] + F.T @ Vxx @ F)
        Qx, Qu = Qt[:n_x], Qt[n_x:]
        Qxx, Qux, Quu = Qtt[:n_x, :n_x], Qtt[n_x:, :n_x], Qtt[n_x:, n_x:]
        for lam in reg_ladder:
            try:
                c = la.cho_factor(Quu + lam * np.eye(Quu.shape[0]), lower=True)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise NumericalError(f"control Hessian not positive definite at t={t} after regularization")
        K[t] = -la.cho_solve(c, Qux)
        kff[t] = -la.cho_solve(c, Qu)
        Vx = Qx + K[t].T @ Quu @ kff[t] + K[t].T @ Qu + Qux.T @ kff[t]
        Vxx = symmetrize(Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t])
    return K, kff


def run_ilqg(model, spec, x0, u_init, options=IlqgOptions()):
    """Optimize the nominal trajectory from the initial-state mean ``x0``.

    ``u_init`` is a control vector (held over the horizon) or a ``(T, n_u)``
    array. Returns the affine policy of the last backward pass around the
    final nominal trajectory.
    """
    T = spec.horizon
    x0 = np.asarray(x0, dtype=float)
    U = np.broadcast_to(np.asarray(u_init, dtype=float), (T, model.n_u)).copy()
    X = np.zeros((T + 1, model.n_x))
    X, U = _rollout(model, x0, X, U, np.zeros((T, model.n_u, model.n_x)), np.zeros_like(U), 0.0)
    cost = trajectory_cost(spec, X, U)
    costs = [cost]
    converged = flagged = False
    it = 0
    K, kff = _backward(model, spec, X, U, options.reg_ladder)
    for it in range(1, options.max_iter + 1):
        accepted = None
        for step in options.line_search:
            try:
                Xn, Un = _rollout(model, x0, X, U, K, kff, step)
                cn = trajectory_cost(spec, Xn, Un)
            except (ValueError, ArithmeticError):
                continue
            if np.isfinite(cn) and cn <= cost:
                accepted = (Xn, Un, cn)
                break
        if accepted is None:
            flagged = True
            break
        decrease = cost - accepted[2]
        X, U, cost = accepted
        costs.append(cost)
        K, kff = _backward(model, spec, X, U, options.reg_ladder)
        if decrease <= options.tol * max(1.0, abs(cost)):
            converged = True
            break
    return IlqgResult(AffinePolicy(K, X, U), costs, it, converged, flagged)
