"""Forward-backward unscented smoother over the joint state-control trajectory."""

import numpy as np
import scipy.linalg as la

from ..errors import EStepError
from ..gaussian import FactorizationError, cholesky_psd, symmetrize, whitening_rows
from ..policy import AffineBasis
from .moments import SigmaPointConfig, TrajectoryMoments, residual_moments, unscented_transform


def _policy_joint(m, P, theta, sigma, basis, cfg):
    """Joint Gaussian over ``(x, u)`` with ``u ~ N(theta^T B(x), sigma)``."""
    n = m.size
    if isinstance(basis, AffineBasis):
        K = theta[:n].T
        mu = K @ m + theta[n]
        P_xu = P @ K.T
        P_uu = K @ P_xu + sigma
    else:
        mu, P_uu, P_xu = unscented_transform(lambda p: basis(p) @ theta, m, P, cfg)
        P_uu = P_uu + sigma
    mean = np.concatenate([m, mu])
    cov = np.block([[P, P_xu], [P_xu.T, P_uu]])
    return mean, symmetrize(cov)


def _observation_update(m, P, spec, t, alpha, cfg, linear):
    """Measurement update with observation ``z*_t`` and noise ``(alpha Gamma_t)^-1``.

    The observation is whitened first, which also removes directions with zero
    weight, so singular ``Gamma_t`` needs no special treatment.
    """
    Wh = whitening_rows(alpha * spec.weight(t))
    if Wh.shape[0] == 0:
        return m, P
    z = Wh @ spec.target(t)
    if linear:
        H = Wh @ spec.h_jacobian(m, t)
        y = Wh @ spec.h(m, t)
        S = H @ P @ H.T
        C = P @ H.T
    else:
        y, S, C = unscented_transform(lambda p: spec.h(p, t) @ Wh.T, m, P, cfg)
    S = symmetrize(S + np.eye(S.shape[0]))
    L = cholesky_psd(S)[0]
    gain = la.cho_solve((L, True), C.T, check_finite=False).T
    m = m + gain @ (z - y)
    P = symmetrize(P - gain @ S @ gain.T)
    return m, P


def _predict(m, P, model, t, cfg):
    Q = model.process_noise(t)
    if hasattr(model, "A") and hasattr(model, "B"):
        F = np.hstack([model.A, model.B])
        mp = model.step_mean(m)
        Pp = F @ P @ F.T
        C = P @ F.T
    else:
        mp, Pp, C = unscented_transform(model.step_mean, m, P, cfg)
    return mp, symmetrize(Pp + Q), C


def _is_linear_obs(spec, t):
    cons = spec.constraints if t < spec.horizon else spec.terminal_constraints()
    return len(cons) == 0


def smooth_unscented(model, spec, prior, cfg=SigmaPointConfig()):
    """One forward filtering and one backward smoothing pass.

    ``prior`` is a :class:`PolicyPrior`; the observation scale is ``spec.alpha``.
    Linear dynamics and constraint-free observations are propagated in closed
    form (the unscented transform is exact there anyway).
    """
    params = prior.params
    T = spec.horizon
    n_x = model.n_x
    sigma = prior.policy_cov()
    alpha = spec.alpha

    filt_m, filt_P, pred_m, pred_P, cross = [], [], [], [], []
    m = np.array(prior.x0.mean, dtype=float)
    P = np.array(prior.x0.cov, dtype=float)
    t = 0
    try:
        for t in range(T):
            mt, Pt = _policy_joint(m, P, params.theta[t], sigma[t], params.basis, cfg)
            mt, Pt = _observation_update(mt, Pt, spec, t, alpha, cfg, _is_linear_obs(spec, t))
            filt_m.append(mt)
            filt_P.append(Pt)
            m, P, C = _predict(mt, Pt, model, t, cfg)
            pred_m.append(m)
            pred_P.append(P)
            cross.append(C)
        t = T
        m, P = _observation_update(m, P, spec, T, alpha, cfg, _is_linear_obs(spec, T))
    except FactorizationError as exc:
        raise EStepError(str(exc), t=t) from exc

    term_m, term_P = m, P
    mean = np.empty((T, model.n_tau))
    cov = np.empty((T, model.n_tau, model.n_tau))
    ms, Ps = term_m, term_P
    for t in range(T - 1, -1, -1):
        try:
            L = cholesky_psd(pred_P[t])[0]
        except FactorizationError as exc:
            raise EStepError(f"predicted covariance: {exc}", t=t) from exc
        G = la.cho_solve((L, True), cross[t].T, check_finite=False).T
        mean[t] = filt_m[t] + G @ (ms - pred_m[t])
        cov[t] = symmetrize(filt_P[t] + G @ (Ps - pred_P[t]) @ G.T)
        ms, Ps = mean[t, :n_x], cov[t, :n_x, :n_x]

    resid = residual_moments(spec, mean, cov, term_m, term_P, cfg)
    return TrajectoryMoments(n_x, mean, cov, term_m, term_P, resid,
                             info={"backend": "unscented"})
