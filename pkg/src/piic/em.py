"""Parameter updates and the expectation-maximization loop.

The M-step maximizes the expected complete-data log-likelihood under the
smoothed trajectory distribution ``q``. Only the terms that depend on the
policy ``(Theta, Sigma_delta)`` and the scale ``alpha`` are kept; this
quantity is logged as the surrogate and is guaranteed not to decrease within
an iteration.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg as la

from .errors import EStepError, MStepError, NumericalError
from .gaussian import floor_cov, symmetrize
from .objective import trajectory_cost
from .policy import ControllerParams, StructureMask
from .smoothers import (GaussNewtonConfig, PolicyPrior, SigmaPointConfig, policy_statistics,
                        smooth_map, smooth_unscented)

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class PolicyStats:
    """Stacked ``E[BB^T]``, ``E[Bu^T]``, ``E[uu^T]`` for ``t = 0..T-1``."""

    ebb: np.ndarray
    ebu: np.ndarray
    euu: np.ndarray

    @classmethod
    def from_moments(cls, moments, basis, cfg=SigmaPointConfig()):
        return cls(*policy_statistics(moments, basis, cfg))

    @property
    def horizon(self):
        return self.ebb.shape[0]


def _stats(moments_or_stats, basis, cfg):
    if isinstance(moments_or_stats, PolicyStats):
        return moments_or_stats
    return PolicyStats.from_moments(moments_or_stats, basis, cfg)


def _ridge(m, ridge):
    """Trace-scaled ridge ``ridge * tr(m) / n * I``."""
    if ridge == 0.0:
        return m
    n = m.shape[-1]
    return m + ridge * max(np.trace(m) / n, 1e-300) * np.eye(n)


def _normal_solve(ebb, ebu, ridge, t=None, p=None):
    try:
        c = la.cho_factor(symmetrize(_ridge(ebb, ridge)), lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise MStepError("normal matrix E[BB^T] is singular", t=t, p=p) from exc
    return la.cho_solve(c, ebu, check_finite=False)


def update_theta_tv(moments, basis, ridge=0.0, cfg=SigmaPointConfig()):
    """Per-time gains ``Theta_t = (E[BB^T] + ridge)^-1 E[Bu^T]``; shape ``(T, n_b, n_u)``."""
    st = _stats(moments, basis, cfg)
    return np.stack([_normal_solve(st.ebb[t], st.ebu[t], ridge, t=t) for t in range(st.horizon)])


def update_theta_ti(moments, basis, ridge=0.0, cfg=SigmaPointConfig()):
    """One shared gain from the moment sums over time; shape ``(n_b, n_u)``."""
    st = _stats(moments, basis, cfg)
    return _normal_solve(st.ebb.sum(axis=0), st.ebu.sum(axis=0), ridge)


def update_theta_structured(moments, basis, mask, ridge=0.0, time_invariant=False,
                            cfg=SigmaPointConfig()):
    """Column-wise least squares restricted to the rows each control may read.

    Returns ``(T, n_b, n_u)`` (time-varying) or ``(n_b, n_u)``. Entries outside
    the mask are never written and stay exactly zero.
    """
    st = _stats(moments, basis, cfg)
    T, n_b, n_u = st.ebu.shape
    if mask.shape != (n_b, n_u):
        raise MStepError(f"mask shape {mask.shape} does not match gains {(n_b, n_u)}")
    theta = np.zeros((n_b, n_u) if time_invariant else (T, n_b, n_u))
    for p in range(n_u):
        rows = mask.selector(p)
        if rows.size == 0:
            continue
        sub_bb = st.ebb[:, rows[:, None], rows[None, :]]
        sub_bu = st.ebu[:, rows, p]
        if time_invariant:
            theta[rows, p] = _normal_solve(sub_bb.sum(axis=0), sub_bu.sum(axis=0), ridge, p=p)
        else:
            for t in range(T):
                theta[t, rows, p] = _normal_solve(sub_bb[t], sub_bu[t], ridge, t=t, p=p)
    return theta


def residual_second_moments(stats, theta):
    """``E[(u - Theta^T B)(u - Theta^T B)^T]`` per time step."""
    theta = np.broadcast_to(theta, stats.ebu.shape)
    cross = np.einsum("tbu,tbv->tuv", theta, stats.ebu)
    quad = np.einsum("tbu,tbc,tcv->tuv", theta, stats.ebb, theta)
    return symmetrize(stats.euu - cross - np.swapaxes(cross, 1, 2) + quad)


def update_sigma_delta(moments, basis, theta, structured=False, time_invariant=False,
                       floor=SIGMA_FLOOR, cfg=SigmaPointConfig()):
    """Control-noise covariances for the given (already updated) gains.

    Full residual covariance in the unstructured case, its diagonal (one
    variance per subcontrol) in the structured case. A time-invariant
    controller shares one covariance, the time average.
    """
    st = _stats(moments, basis, cfg)
    E = residual_second_moments(st, theta)
    if time_invariant:
        E = np.broadcast_to(E.mean(axis=0), E.shape)
    scale = max(np.abs(E).max(), 1.0)
    if structured:
        d = np.einsum("tii->ti", E)
        if d.min() < -1e-10 * scale:
            raise NumericalError(f"negative control variance {d.min():.3e}")
        return np.clip(d, floor, None)[..., None] * np.eye(E.shape[-1])
    lam_min = np.linalg.eigvalsh(E).min()
    if lam_min < -1e-10 * scale:
        raise NumericalError(f"control residual covariance has eigenvalue {lam_min:.3e}")
    return floor_cov(E, floor)


def observation_ranks(spec, tol=1e-12):
    """Rank of ``Gamma_t`` for running and terminal steps."""
    def rank(w):
        lam = np.linalg.eigvalsh(w)
        return int(np.sum(lam > tol * max(1.0, lam.max(initial=0.0))))
    return rank(spec.weight(0)), rank(spec.weight(spec.horizon))


def weighted_residual(moments, spec):
    """``sum_{t=0}^{T} Tr(Gamma_t M_t)``."""
    T = spec.horizon
    W, WT = spec.weight(0), spec.weight(T)
    run = sum(float(np.sum(W * M)) for M in moments.residual[:T])
    return run + float(np.sum(WT * moments.residual[T]))


def update_alpha(moments, spec, previous=None, numerator="exact"):
    """Closed-form scale update ``alpha = n / sum_t Tr(Gamma_t M_t)``.

    ``numerator="exact"`` uses ``n = T rank(Gamma) + rank(Gamma_T)``, the exact
    maximizer of the surrogate over ``alpha``. ``numerator="reduced"`` uses
    ``(T - 1) n_z + n_zT`` with the observation dimensions. A vanishing
    denominator leaves ``alpha`` unchanged with a warning.
    """
    T = spec.horizon
    if numerator == "exact":
        r, rT = observation_ranks(spec)
        num = T * r + rT
    elif numerator == "reduced":
        num = (T - 1) * spec.dim(0) + spec.dim(T)
    else:
        raise ValueError(f"unknown alpha numerator {numerator!r}")
    den = weighted_residual(moments, spec)
    prev = spec.alpha if previous is None else previous
    if den < -1e-12:
        raise MStepError(f"negative weighted residual {den:.3e} in alpha update")
    if den < 1e-12:
        warnings.warn("weighted residual vanished; alpha left unchanged", RuntimeWarning, stacklevel=2)
        return prev
    return num / den


def surrogate(stats, moments, spec, theta, sigma, alpha):
    """Policy- and scale-dependent part of the expected complete-data log-likelihood."""
    theta = np.broadcast_to(theta, stats.ebu.shape)
    sigma = np.broadcast_to(sigma, stats.euu.shape)
    n_u = sigma.shape[-1]
    E = residual_second_moments(stats, theta)
    sign, logdet = np.linalg.slogdet(sigma)
    if np.any(sign <= 0):
        raise NumericalError("control covariance is not positive definite")
    tr = np.einsum("tij,tji->t", np.linalg.inv(sigma), E)
    policy = -0.5 * float(np.sum(n_u * np.log(2 * np.pi) + logdet + tr))
    T = spec.horizon
    r, rT = observation_ranks(spec)
    n_obs = T * r + rT
    obs = 0.5 * n_obs * np.log(alpha / (2 * np.pi)) - 0.5 * alpha * weighted_residual(moments, spec)
    return policy + obs


@dataclass(frozen=True)
class Problem:
    """Everything the inference needs: dynamics, observation model, initial state."""

    model: object
    spec: object
    x0: object


@dataclass(frozen=True)
class PiicOptions:
    smoother: str = "unscented"
    time_invariant: bool = False
    mask: Optional[StructureMask] = None
    threshold: float = 1e-3
    max_iter: int = 100
    ridge: float = 1e-9
    alpha0: float = 1.0
    alpha_numerator: str = "exact"
    learn_alpha: bool = True
    sigma_floor: float = SIGMA_FLOOR
    sigma_points: SigmaPointConfig = field(default_factory=SigmaPointConfig)
    gauss_newton: GaussNewtonConfig = field(default_factory=GaussNewtonConfig)

    def __post_init__(self):
        if self.smoother not in ("unscented", "map"):
            raise ValueError(f"unknown smoother {self.smoother!r}")


@dataclass
class IterationRecord:
    iteration: int
    alpha: float
    surrogate_old: float
    surrogate_new: float
    change: float
    mean_cost: float
    smoother_warning: Optional[str] = None


@dataclass
class PiicResult:
    params: ControllerParams
    alpha: float
    moments: object
    log: list
    converged: bool
    flagged: bool = False


def m_step(stats, params, options):
    """Updated ``(theta, sigma)`` for the configured controller structure."""
    basis = params.basis
    T = stats.horizon
    structured = options.mask is not None
    if structured:
        theta = update_theta_structured(stats, basis, options.mask, options.ridge,
                                        options.time_invariant)
    elif options.time_invariant:
        theta = update_theta_ti(stats, basis, options.ridge)
    else:
        theta = update_theta_tv(stats, basis, options.ridge)
    theta = np.array(np.broadcast_to(theta, (T,) + theta.shape[-2:]))
    sigma = update_sigma_delta(stats, basis, theta, structured, options.time_invariant,
                               options.sigma_floor)
    return theta, np.array(sigma)


def e_step(problem, params, alpha, options, warm=None):
    spec = replace(problem.spec, alpha=alpha)
    prior = PolicyPrior(params, problem.x0, options.sigma_floor)
    if options.smoother == "map":
        return smooth_map(problem.model, spec, prior, options.gauss_newton, options.sigma_points,
                          init=warm)
    return smooth_unscented(problem.model, spec, prior, options.sigma_points)


def run_piic(problem, init, options=PiicOptions(), callback=None):
    """Alternate smoothing and closed-form updates until the smoothed state
    means move by less than ``options.threshold`` (infinity norm).

    ``callback(record, params)`` is invoked after every iteration. Without
    convergence the iterate with the best surrogate is returned, flagged.
    """
    if options.mask is not None and init.mask is None:
        init = replace(init, mask=options.mask)
    params = init
    alpha = float(options.alpha0)
    records = []
    prev_means = None
    moments = None
    best = None
    converged = False
    for k in range(1, options.max_iter + 1):
        try:
            moments = e_step(problem, params, alpha, options, warm=moments)
        except EStepError as exc:
            exc.iteration = k
            raise
        spec = replace(problem.spec, alpha=alpha)
        try:
            stats = PolicyStats.from_moments(moments, params.basis, options.sigma_points)
            theta, sigma = m_step(stats, params, options)
            new_alpha = (update_alpha(moments, spec, alpha, options.alpha_numerator)
                         if options.learn_alpha else alpha)
        except MStepError as exc:
            exc.iteration = k
            raise
        floor = options.sigma_floor
        s_old = surrogate(stats, moments, spec, params.theta, floor_cov(params.sigma, floor), alpha)
        s_new = surrogate(stats, moments, spec, theta, sigma, new_alpha)
        means = moments.state_means
        change = np.inf if prev_means is None else float(np.max(np.abs(means - prev_means)))
        record = IterationRecord(
            k, new_alpha, s_old, s_new, change,
            trajectory_cost(problem.spec, means, moments.control_means),
            moments.info.get("warning"))
        records.append(record)
        params = params.updated(theta, sigma)
        alpha = new_alpha
        log.debug("iteration %d: alpha=%.4g surrogate=%.6g change=%.3g", k, alpha, s_new, change)
        if callback is not None:
            callback(record, params)
        if best is None or s_new > best[0]:
            best = (s_new, params, alpha, moments)
        if change < options.threshold:
            converged = True
            break
        prev_means = means
    if converged:
        return PiicResult(params, alpha, moments, records, True)
    _, params, alpha, moments = best
    return PiicResult(params, alpha, moments, records, False, flagged=True)
