"""Controller parameterization ``u_t ~ N(Theta_t^T B(x_t), Sigma_delta_t)``."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ValidationError


class Basis:
    """State feature map ``B(x)`` of dimension ``n_b``.

    ``bias_index`` names the constant-one feature (or ``None``), which is where
    the feedforward part of the control lives.
    """

    name = "custom"
    bias_index: Optional[int] = None
    closed_form = False

    def __init__(self, n_x, n_b):
        self.n_x = int(n_x)
        self.n_b = int(n_b)

    def __call__(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        h = np.maximum(1e-6, 1e-6 * np.abs(x))
        steps = h[..., None, :] * np.eye(self.n_x)
        plus = self(x[..., None, :] + steps)
        minus = self(x[..., None, :] - steps)
        return np.swapaxes((plus - minus) / (2.0 * h[..., :, None]), -1, -2)


class AffineBasis(Basis):
    """``B(x) = [x; 1]``; the linear-wind basis of the quadcopter is this one."""

    closed_form = True

    def __init__(self, n_x, name="affine"):
        super().__init__(n_x, n_x + 1)
        self.name = name
        self.bias_index = n_x

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        jac = np.vstack([np.eye(self.n_x), np.zeros((1, self.n_x))])
        return np.broadcast_to(jac, x.shape[:-1] + jac.shape).copy()

    def moments(self, mean, cov):
        """Exact ``E[BB^T]``, ``E[Bu^T]``, ``E[uu^T]`` under a Gaussian over ``(x, u)``.

        ``mean``/``cov`` may carry leading batch dimensions.
        """
        n = self.n_x
        mx, mu = mean[..., :n], mean[..., n:]
        sxx, sxu, suu = cov[..., :n, :n], cov[..., :n, n:], cov[..., n:, n:]
        batch = mean.shape[:-1]
        ebb = np.empty(batch + (n + 1, n + 1))
        ebb[..., :n, :n] = sxx + mx[..., :, None] * mx[..., None, :]
        ebb[..., :n, n] = mx
        ebb[..., n, :n] = mx
        ebb[..., n, n] = 1.0
        ebu = np.concatenate([sxu + mx[..., :, None] * mu[..., None, :], mu[..., None, :]], axis=-2)
        euu = suu + mu[..., :, None] * mu[..., None, :]
        return ebb, ebu, euu


class ObstacleAwareBasis(Basis):
    """``[x; 1; sum_i c_i(x)]`` with ``c_i`` the squared distance to obstacle ``i``
    minus its squared radius."""

    name = "obstacle_aware"

    def __init__(self, n_x, centers, radii, xy_index=(0, 1)):
        super().__init__(n_x, n_x + 2)
        self.bias_index = n_x
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        self.xy_index = tuple(int(i) for i in xy_index)
        if self.centers.shape != (self.radii.size, 2):
            raise ValidationError("need one (x, y) center per obstacle radius")

    def with_radii(self, radii):
        return ObstacleAwareBasis(self.n_x, self.centers, radii, self.xy_index)

    def clearance(self, x):
        ix, iy = self.xy_index
        dx = x[..., ix, None] - self.centers[:, 0]
        dy = x[..., iy, None] - self.centers[:, 1]
        return np.sum(dx * dx + dy * dy - self.radii ** 2, axis=-1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate(
            [x, np.ones(x.shape[:-1] + (1,)), self.clearance(x)[..., None]], axis=-1)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        jac = np.zeros(x.shape[:-1] + (self.n_b, self.n_x))
        jac[..., : self.n_x, :] = np.eye(self.n_x)
        ix, iy = self.xy_index
        jac[..., -1, ix] = np.sum(2.0 * (x[..., ix, None] - self.centers[:, 0]), axis=-1)
        jac[..., -1, iy] = np.sum(2.0 * (x[..., iy, None] - self.centers[:, 1]), axis=-1)
        return jac


class CustomBasis(Basis):
    def __init__(self, n_x, n_b, func, bias_index=None, name="custom"):
        super().__init__(n_x, n_b)
        self.func = func
        self.bias_index = bias_index
        self.name = name

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class StructureMask:
    """Sparsity pattern ``Phi`` of the gain matrix (``n_b x n_u``, boolean).

    Column ``p`` keeps the rows ``selector(p)``; ``S(p)`` and ``S_prime(p)``
    are the corresponding selection / zero-padding matrices.
    """

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi).astype(bool)
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def shape(self):
        return self.phi.shape

    @classmethod
    def full(cls, n_b, n_u):
        return cls(np.ones((n_b, n_u), dtype=bool))

    @classmethod
    def from_flow(cls, row_blocks, col_blocks, flow, shared_rows=(), n_b=None):
        """Build ``Phi`` from subsystem row blocks, subcontrol column blocks and
        the set ``flow`` of ``(i, j)`` pairs (0-based) where subcontrol ``j``
        may read subsystem ``i``. ``shared_rows`` (e.g. the bias) are visible
        to every subcontrol."""
        if n_b is None:
            n_b = 1 + max([max(r) for r in row_blocks] + list(shared_rows))
        n_u = 1 + max(max(c) for c in col_blocks)
        phi = np.zeros((n_b, n_u), dtype=bool)
        for i, j in flow:
            phi[np.ix_(list(row_blocks[i]), list(col_blocks[j]))] = True
        phi[list(shared_rows), :] = True
        return cls(phi)

    def selector(self, p):
        return np.flatnonzero(self.phi[:, p])

    def S(self, p):
        rows = self.selector(p)
        s = np.zeros((rows.size, self.phi.shape[0]))
        s[np.arange(rows.size), rows] = 1.0
        return s

    def S_prime(self, p):
        return self.S(p).T

    def apply(self, theta):
        return np.where(self.phi, theta, 0.0)


@dataclass(frozen=True)
class ControllerParams:
    """Per-time gains ``theta[t]`` (``n_b x n_u``) and control noise ``sigma[t]``.

    A time-invariant controller stores the same matrix at every step.
    """

    basis: Basis
    theta: np.ndarray
    sigma: np.ndarray
    time_invariant: bool = False
    mask: Optional[StructureMask] = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if theta.ndim != 3 or theta.shape[1] != self.basis.n_b:
            raise ValidationError(f"theta must be (T, {self.basis.n_b}, n_u), got {theta.shape}")
        if sigma.shape != (theta.shape[0], theta.shape[2], theta.shape[2]):
            raise ValidationError("sigma must be (T, n_u, n_u)")
        if self.mask is not None:
            if self.mask.shape != theta.shape[1:]:
                raise ValidationError("mask shape does not match theta")
            theta = np.where(self.mask.phi, theta, 0.0)
        theta.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def initial(cls, basis, horizon, u_mean, sigma0, time_invariant=False, mask=None):
        """Zero gains with the feedforward row set to ``u_mean``."""
        u_mean = np.atleast_1d(np.asarray(u_mean, dtype=float))
        n_u = u_mean.size
        theta = np.zeros((horizon, basis.n_b, n_u))
        if basis.bias_index is not None:
            theta[:, basis.bias_index, :] = u_mean
        sigma0 = np.asarray(sigma0, dtype=float)
        if sigma0.ndim == 0:
            sigma0 = sigma0 * np.eye(n_u)
        sigma = np.broadcast_to(sigma0, (horizon, n_u, n_u))
        return cls(basis, theta, sigma, time_invariant, mask)

    @property
    def horizon(self):
        return self.theta.shape[0]

    @property
    def n_u(self):
        return self.theta.shape[2]

    def mean_control(self, x, t):
        return self.basis(x) @ self.theta[t]

    def affine_gains(self):
        """``(K, k)`` with ``u = K x + k`` for an affine basis."""
        if not isinstance(self.basis, AffineBasis):
            raise TypeError("affine_gains needs an affine basis")
        n = self.basis.n_x
        return np.swapaxes(self.theta[:, :n, :], 1, 2), self.theta[:, n, :]

    def updated(self, theta, sigma):
        return replace(self, theta=theta, sigma=sigma)
