"""Sigma-point transforms, trajectory moments, and the expectations used by the M-step."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import EStepError, ValidationError
from ..gaussian import DEFAULT_JITTER, FactorizationError, JointGaussian, cholesky_psd, floor_cov, symmetrize


@dataclass(frozen=True)
class SigmaPointConfig:
    """Scaled unscented-transform parameters.

    With ``c = spread**2 * (n + kappa)`` the points are ``m`` and
    ``m +- sqrt(c) L e_i``. ``spread=1, kappa=3-n`` (``c = 3``) reproduces the
    fourth moment of a standard normal exactly.
    """

    spread: float = 1e-1
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.spread <= 1.0:
            raise ValidationError(f"sigma-point spread must lie in (0, 1], got {self.spread}")

    def scale(self, n):
        c = self.spread ** 2 * (n + self.kappa)
        if not c > 0:
            raise ValidationError("sigma-point scale n + kappa must be positive")
        return c

    def weights(self, n):
        """Mean and covariance weights for dimension ``n``."""
        c = self.scale(n)
        lam = c - n
        wm = np.full(2 * n + 1, 0.5 / c)
        wc = wm.copy()
        wm[0] = lam / c
        wc[0] = lam / c + 1.0 - self.spread ** 2 + self.beta
        return wm, wc


def _batched_cholesky(cov, jitter_schedule=DEFAULT_JITTER):
    cov = symmetrize(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        flat = cov.reshape((-1,) + cov.shape[-2:])
        out = np.empty_like(flat)
        for i, m in enumerate(flat):
            # zero blocks (pinned variables) have an exact zero factor
            if not np.any(m):
                out[i] = 0.0
                continue
            out[i] = cholesky_psd(m, jitter_schedule)[0]
        return out.reshape(cov.shape)


def sigma_points(mean, cov, cfg=SigmaPointConfig()):
    """Sigma points of shape ``(..., 2n+1, n)`` for (batched) Gaussians."""
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[-1]
    L = _batched_cholesky(cov) * np.sqrt(cfg.scale(n))
    offsets = np.swapaxes(L, -1, -2)
    return np.concatenate(
        [mean[..., None, :], mean[..., None, :] + offsets, mean[..., None, :] - offsets], axis=-2)


def unscented_transform(func, mean, cov, cfg=SigmaPointConfig()):
    """Push a (batched) Gaussian through ``func``.

    Returns ``(y_mean, y_cov, xy_cov)``; ``func`` must accept points of shape
    ``(..., 2n+1, n)``.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[-1]
    pts = sigma_points(mean, cov, cfg)
    wm, wc = cfg.weights(n)
    y = np.asarray(func(pts), dtype=float)
    y_mean = np.einsum("k,...ki->...i", wm, y)
    dy = y - y_mean[..., None, :]
    dx = pts - mean[..., None, :]
    y_cov = symmetrize(np.einsum("k,...ki,...kj->...ij", wc, dy, dy))
    xy_cov = np.einsum("k,...ki,...kj->...ij", wc, dx, dy)
    return y_mean, y_cov, xy_cov


@dataclass(frozen=True)
class PolicyPrior:
    """Stochastic policy plus initial-state Gaussian; ``sigma_floor`` bounds the
    control-noise eigenvalues from below so the policy factor stays invertible."""

    params: object
    x0: JointGaussian
    sigma_floor: float = 1e-8

    def policy_cov(self):
        return floor_cov(self.params.sigma, self.sigma_floor)


@dataclass
class TrajectoryMoments:
    """Smoothed Gaussian moments of ``(x_t, u_t)`` for ``t < T`` and of ``x_T``.

    ``residual`` holds ``M_t = E[(z*_t - h)(z*_t - h)^T]`` for ``t = 0..T``.
    """

    n_x: int
    mean: np.ndarray
    cov: np.ndarray
    terminal_mean: np.ndarray
    terminal_cov: np.ndarray
    residual: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return self.mean.shape[0]

    @property
    def state_means(self):
        return np.vstack([self.mean[:, : self.n_x], self.terminal_mean[None, :]])

    @property
    def state_covs(self):
        n = self.n_x
        return np.concatenate([self.cov[:, :n, :n], self.terminal_cov[None]], axis=0)

    @property
    def control_means(self):
        return self.mean[:, self.n_x :]

    def joint(self, t):
        if t < self.horizon:
            return JointGaussian(self.mean[t], self.cov[t])
        return JointGaussian(self.terminal_mean, self.terminal_cov)


# Third-degree spherical cubature: all weights positive, so residual second
# moments are PSD and bounded by the range of h even when h has kinks.
CUBATURE = SigmaPointConfig(spread=1.0, beta=0.0, kappa=0.0)


def _residual_second_moment(spec, t, mean, cov, target):
    cons = spec.constraints if t < spec.horizon else spec.terminal_constraints()
    if not cons:
        # h is linear without barrier slots
        H = spec.h_jacobian(mean, t)
        r = target - spec.h(mean, t)
        return symmetrize(H @ cov @ np.swapaxes(H, -1, -2) + r[..., :, None] * r[..., None, :])
    pts = sigma_points(mean, cov, CUBATURE)
    wm, _ = CUBATURE.weights(mean.shape[-1])
    r = target[..., None, :] - spec.h(pts, t)
    return symmetrize(np.einsum("k,...ki,...kj->...ij", wm, r, r))


def residual_moments(spec, mean, cov, terminal_mean, terminal_cov, cfg=None):
    """``M_t = E[(z*_t - h)(z*_t - h)^T]`` for ``t = 0..T`` over each smoothed Gaussian.

    Exact when ``h`` is linear, cubature otherwise. ``cfg`` is accepted for
    interface symmetry and not used.
    """
    T = spec.horizon
    targets = np.stack([spec.target(t) for t in range(T)])
    try:
        run = _residual_second_moment(spec, 0, mean, cov, targets)
        term = _residual_second_moment(spec, T, terminal_mean, terminal_cov, spec.target(T))
    except FactorizationError as exc:
        raise EStepError(f"residual moments: {exc}") from exc
    return list(run) + [term]


def policy_statistics(moments, basis, cfg=SigmaPointConfig()):
    """Stacked ``E[BB^T]``, ``E[Bu^T]``, ``E[uu^T]`` over ``t = 0..T-1``.

    Closed form for the affine basis, sigma points over the joint otherwise
    (exact in ``u`` since the stacked map ``[B(x); u]`` is linear in ``u``).
    """
    if getattr(basis, "closed_form", False):
        return basis.moments(moments.mean, moments.cov)
    n_x, n_b = moments.n_x, basis.n_b

    def stacked(p):
        return np.concatenate([basis(p[..., :n_x]), p[..., n_x:]], axis=-1)

    m, c, _ = unscented_transform(stacked, moments.mean, moments.cov, cfg)
    second = c + m[..., :, None] * m[..., None, :]
    return second[:, :n_b, :n_b], second[:, :n_b, n_b:], second[:, n_b:, n_b:]


def basis_moments(moments, basis, t, cfg=SigmaPointConfig()):
    """``(E[B B^T], E[B u^T])`` at time ``t < T``."""
    if not 0 <= t < moments.horizon:
        raise IndexError(f"basis moments need 0 <= t < {moments.horizon}, got {t}")
    sub = TrajectoryMoments(moments.n_x, moments.mean[t : t + 1], moments.cov[t : t + 1],
                            moments.terminal_mean, moments.terminal_cov)
    ebb, ebu, _ = policy_statistics(sub, basis, cfg)
    return ebb[0], ebu[0]
