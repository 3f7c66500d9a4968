"""MAP trajectory smoothing as damped Gauss-Newton on a stacked least-squares problem.

Variables are ``tau_0 .. tau_{T-1}`` and ``x_T``. Factors: the initial-state
prior, dynamics residuals ``x_{t+1} - F(tau_t)``, policy residuals
``u_t - Theta_t^T B(x_t)``, and observation residuals ``z*_t - h(tau_t)``.
The Gauss-Newton information matrix is block tridiagonal in time, which gives
linear-time steps and Laplace covariances.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import EStepError
from ..gaussian import floor_cov
from .banded import BlockTridiagonal
from .moments import SigmaPointConfig, TrajectoryMoments, residual_moments


@dataclass(frozen=True)
class GaussNewtonConfig:
    max_iter: int = 50
    damping: float = 1e-4
    tol: float = 1e-9
    max_damping: float = 1e10
    # eigenvalue floors applied before inverting the noise covariances
    noise_floor: float = 1e-12
    prior_floor: float = 1e-12


def _inv_sym(m):
    return np.linalg.inv(m)


class _Problem:
    def __init__(self, model, spec, prior, cfg):
        self.model, self.spec, self.prior = model, spec, prior
        T = spec.horizon
        self.T, self.n_x, self.n_u = T, model.n_x, model.n_u
        self.theta = prior.params.theta
        self.basis = prior.params.basis
        self.mu0 = np.asarray(prior.x0.mean, dtype=float)
        self.P0 = _inv_sym(floor_cov(prior.x0.cov, cfg.prior_floor))
        noise = np.stack([model.process_noise(t) for t in range(T)])
        self.Peta = _inv_sym(floor_cov(noise, cfg.noise_floor))
        self.Pdelta = _inv_sym(prior.policy_cov())
        self.W = spec.alpha * spec.weight(0)
        self.WT = spec.alpha * spec.weight(T)
        self.targets = np.stack([spec.target(t) for t in range(T)])
        self.target_T = spec.target(T)

    def residuals(self, X, U):
        T = self.T
        tau = np.concatenate([X[:T], U], axis=-1)
        e0 = X[0] - self.mu0
        ed = X[1:] - self.model.step_mean(tau)
        ep = U - np.einsum("tb,tbu->tu", self.basis(X[:T]), self.theta)
        r = self.targets - self.spec.h(tau, 0)
        rT = self.target_T - self.spec.h(X[T], T)
        return tau, e0, ed, ep, r, rT

    def objective(self, X, U):
        _, e0, ed, ep, r, rT = self.residuals(X, U)
        total = e0 @ self.P0 @ e0
        total += np.einsum("ti,tij,tj->", ed, self.Peta, ed)
        total += np.einsum("ti,tij,tj->", ep, self.Pdelta, ep)
        total += np.einsum("ti,ij,tj->", r, self.W, r)
        total += rT @ self.WT @ rT
        return 0.5 * float(total)

    def linearize(self, X, U):
        """Gauss-Newton blocks ``(D, E)`` and gradient blocks ``g``."""
        T, n_x, n_u = self.T, self.n_x, self.n_u
        n = n_x + n_u
        tau, e0, ed, ep, r, rT = self.residuals(X, U)
        Jd = self.model.jacobian(tau)
        Jb = self.basis.jacobian(X[:T])
        Jp = np.concatenate(
            [-np.einsum("tbu,tbx->tux", self.theta, Jb), np.broadcast_to(np.eye(n_u), (T, n_u, n_u))],
            axis=-1)
        H = self.spec.h_jacobian(tau, 0)
        HT = self.spec.h_jacobian(X[T], T)

        PdJ = np.einsum("tij,tjk->tik", self.Peta, Jd)
        PpJ = np.einsum("tij,tjk->tik", self.Pdelta, Jp)
        WH = np.einsum("ij,tjk->tik", self.W, H)
        D = (np.einsum("tji,tjk->tik", Jd, PdJ) + np.einsum("tji,tjk->tik", Jp, PpJ)
             + np.einsum("tji,tjk->tik", H, WH))
        D[0, :n_x, :n_x] += self.P0
        D[1:, :n_x, :n_x] += self.Peta[:-1]
        DT = self.Peta[-1] + HT.T @ self.WT @ HT

        g = (np.einsum("tji,tj->ti", PpJ, ep) - np.einsum("tji,tj->ti", WH, r)
             - np.einsum("tji,tj->ti", PdJ, ed))
        g[0, :n_x] += self.P0 @ e0
        g[1:, :n_x] += np.einsum("tij,tj->ti", self.Peta[:-1], ed[:-1])
        gT = self.Peta[-1] @ ed[-1] - HT.T @ self.WT @ rT

        E = []
        for t in range(T):
            width = n if t < T - 1 else n_x
            e = np.zeros((n, width))
            e[:, :n_x] = -PdJ[t].T
            E.append(e)
        return list(D) + [DT], E, list(g) + [gT]


def _split(blocks, T, n_x):
    taus = np.stack(blocks[:T])
    X = np.vstack([taus[:, :n_x], blocks[T][None, :]])
    return X, taus[:, n_x:]


def _mean_rollout(model, prior, T):
    X = np.empty((T + 1, model.n_x))
    U = np.empty((T, model.n_u))
    X[0] = prior.x0.mean
    for t in range(T):
        U[t] = prior.params.mean_control(X[t], t)
        X[t + 1] = model.step_mean(np.concatenate([X[t], U[t]]))
    return X, U


def smooth_map(model, spec, prior, cfg=GaussNewtonConfig(), sigma_cfg=SigmaPointConfig(), init=None):
    """MAP trajectory with Laplace covariances.

    ``init`` warm-starts the solver from a :class:`TrajectoryMoments` or an
    ``(X, U)`` pair; by default the noise-free policy rollout is used. If the
    damping budget runs out the best iterate is returned with
    ``info["warning"]`` set.
    """
    prob = _Problem(model, spec, prior, cfg)
    T, n_x = prob.T, model.n_x
    if init is None:
        X, U = _mean_rollout(model, prior, T)
    elif isinstance(init, TrajectoryMoments):
        X, U = init.state_means.copy(), init.control_means.copy()
    else:
        X, U = (np.array(a, dtype=float) for a in init)

    J = prob.objective(X, U)
    history = [J]
    lam = cfg.damping
    warning = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        D, E, g = prob.linearize(X, U)
        accepted = False
        while lam <= cfg.max_damping:
            damped = [d + lam * np.eye(d.shape[0]) for d in D]
            try:
                step = BlockTridiagonal(damped, E).solve([-gi for gi in g])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            dX, dU = _split(step, T, n_x)
            Xn, Un = X + dX, U + dU
            try:
                Jn = prob.objective(Xn, Un)
            except (ValueError, ArithmeticError):
                Jn = np.inf
            if np.isfinite(Jn) and Jn <= J:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            warning = "damping budget exhausted without cost decrease; returning best iterate"
            break
        decrease = J - Jn
        X, U, J = Xn, Un, Jn
        history.append(J)
        lam = max(lam / 10.0, 1e-15)
        if decrease <= cfg.tol * max(1.0, abs(J)):
            converged = True
            break

    D, E, _ = prob.linearize(X, U)
    try:
        blocks = BlockTridiagonal(D, E).diag_inverse()
    except np.linalg.LinAlgError as exc:
        raise EStepError(str(exc), t=getattr(exc, "block", None)) from exc
    mean = np.concatenate([X[:T], U], axis=-1)
    cov = np.stack(blocks[:T])
    resid = residual_moments(spec, mean, cov, X[T], blocks[T], sigma_cfg)
    info = {"backend": "map", "iterations": it, "converged": converged, "warning": warning,
            "objective": history}
    return TrajectoryMoments(n_x, mean, cov, X[T].copy(), blocks[T], resid, info)


def map_objective(model, spec, prior, X, U, cfg=GaussNewtonConfig()):
    """The smoother's least-squares objective at a given trajectory."""
    return _Problem(model, spec, prior, cfg).objective(np.asarray(X, float), np.asarray(U, float))
