"""Discrete-time stochastic dynamics ``x_{t+1} = F(x_t, u_t) + eta_t``.

Every model accepts batched state-control vectors ``tau`` of shape
``(..., n_x + n_u)`` so that sigma points and finite-difference stencils can
be pushed through in a single call.
"""

import numpy as np

from .errors import NumericalError, ValidationError
from .gaussian import psd_factor, symmetrize


def _require_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"non-finite {what}")


class DynamicsModel:
    """Base class: subclasses implement ``_step`` on batched inputs.

    Parameters
    ----------
    n_x, n_u : int
        State and control dimensions.
    dt : float
        Discretization step in seconds.
    noise_cov : array_like
        Process noise covariance, either ``(n_x, n_x)`` or per time step
        ``(T, n_x, n_x)``.
    """

    analytic_jacobian = False

    def __init__(self, n_x, n_u, dt, noise_cov):
        self.n_x = int(n_x)
        self.n_u = int(n_u)
        self.dt = float(dt)
        noise_cov = symmetrize(np.asarray(noise_cov, dtype=float))
        if noise_cov.shape[-2:] != (self.n_x, self.n_x):
            raise ValidationError(f"noise_cov must be {self.n_x}x{self.n_x}, got {noise_cov.shape}")
        mats = noise_cov.reshape(-1, self.n_x, self.n_x)
        if any(np.linalg.eigvalsh(m).min() < -1e-12 * max(1.0, np.abs(m).max()) for m in mats):
            raise ValidationError("noise_cov must be positive semi-definite")
        self.noise_cov = noise_cov
        self._noise_factor = np.array([psd_factor(m) for m in mats])

    @property
    def n_tau(self):
        return self.n_x + self.n_u

    def process_noise(self, t=0):
        if self.noise_cov.ndim == 2:
            return self.noise_cov
        return self.noise_cov[t]

    def noise_factor(self, t=0):
        if self.noise_cov.ndim == 2:
            return self._noise_factor[0]
        return self._noise_factor[t]

    def _step(self, tau):
        raise NotImplementedError

    def _jacobian(self, tau):
        raise NotImplementedError

    def step_mean(self, tau):
        tau = np.asarray(tau, dtype=float)
        if tau.shape[-1] != self.n_tau:
            raise ValidationError(f"tau must have {self.n_tau} entries, got {tau.shape[-1]}")
        _require_finite(tau, "state-control input")
        return self._step(tau)

    def sample_step(self, tau, noise_draw, t=0):
        noise_draw = np.asarray(noise_draw, dtype=float)
        if noise_draw.shape[-1] != self.n_x:
            raise ValidationError(f"noise draw must have {self.n_x} entries")
        return self.step_mean(tau) + noise_draw @ self.noise_factor(t).T

    def fd_jacobian(self, tau):
        """Central-difference Jacobian ``dF/dtau`` of shape ``(..., n_x, n_tau)``."""
        tau = np.asarray(tau, dtype=float)
        n = self.n_tau
        h = np.maximum(1e-6, 1e-6 * np.abs(tau))
        steps = h[..., None, :] * np.eye(n)
        plus = self._step(tau[..., None, :] + steps)
        minus = self._step(tau[..., None, :] - steps)
        jac = np.swapaxes((plus - minus) / (2.0 * h[..., :, None]), -1, -2)
        return jac

    def jacobian(self, tau):
        tau = np.asarray(tau, dtype=float)
        _require_finite(tau, "state-control input")
        jac = self._jacobian(tau) if self.analytic_jacobian else self.fd_jacobian(tau)
        if not np.all(np.isfinite(jac)):
            raise NumericalError("non-finite dynamics Jacobian")
        return jac

    def linearize(self, tau):
        jac = self.jacobian(tau)
        return jac[..., : self.n_x], jac[..., self.n_x :]


class LinearModel(DynamicsModel):
    """Affine dynamics ``x' = A x + B u + c``."""

    analytic_jacobian = True

    def __init__(self, A, B, noise_cov, c=None, dt=1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        super().__init__(A.shape[0], B.shape[1], dt, noise_cov)
        self.A = A
        self.B = B
        self.c = np.zeros(self.n_x) if c is None else np.asarray(c, dtype=float)

    def _step(self, tau):
        x, u = tau[..., : self.n_x], tau[..., self.n_x :]
        return x @ self.A.T + u @ self.B.T + self.c

    def _jacobian(self, tau):
        jac = np.concatenate([self.A, self.B], axis=1)
        return np.broadcast_to(jac, tau.shape[:-1] + jac.shape).copy()


class UnicycleModel(DynamicsModel):
    """Forward-Euler unicycle with state (x, y, heading) and control (v, omega).

    Heading is left unwrapped.
    """

    analytic_jacobian = True

    def __init__(self, dt=0.05, noise_cov=None):
        if noise_cov is None:
            noise_cov = np.zeros((3, 3))
        super().__init__(3, 2, dt, noise_cov)

    def _step(self, tau):
        th, v, w = tau[..., 2], tau[..., 3], tau[..., 4]
        rate = np.stack([v * np.cos(th), v * np.sin(th), w], axis=-1)
        return tau[..., :3] + self.dt * rate

    def _jacobian(self, tau):
        th, v = tau[..., 2], tau[..., 3]
        jac = np.zeros(tau.shape[:-1] + (3, 5))
        jac[..., 0, 0] = jac[..., 1, 1] = jac[..., 2, 2] = 1.0
        jac[..., 0, 2] = -self.dt * v * np.sin(th)
        jac[..., 1, 2] = self.dt * v * np.cos(th)
        jac[..., 0, 3] = self.dt * np.cos(th)
        jac[..., 1, 3] = self.dt * np.sin(th)
        jac[..., 2, 4] = self.dt
        return jac


class MultiUnicycleModel(DynamicsModel):
    """``n_agents`` independent unicycles stacked as (X^1..X^N, u^1..u^N)."""

    analytic_jacobian = True

    def __init__(self, n_agents, dt=0.05, noise_cov=None):
        self.n_agents = int(n_agents)
        self.agent = UnicycleModel(dt)
        if noise_cov is None:
            noise_cov = np.zeros((3 * self.n_agents, 3 * self.n_agents))
        super().__init__(3 * self.n_agents, 2 * self.n_agents, dt, noise_cov)

    def _agent_tau(self, tau):
        n = self.n_agents
        X = tau[..., : 3 * n].reshape(tau.shape[:-1] + (n, 3))
        U = tau[..., 3 * n :].reshape(tau.shape[:-1] + (n, 2))
        return np.concatenate([X, U], axis=-1)

    def _step(self, tau):
        nxt = self.agent._step(self._agent_tau(tau))
        return nxt.reshape(tau.shape[:-1] + (self.n_x,))

    def _jacobian(self, tau):
        n = self.n_agents
        sub = self.agent._jacobian(self._agent_tau(tau))
        jac = np.zeros(tau.shape[:-1] + (self.n_x, self.n_tau))
        for i in range(n):
            rows = slice(3 * i, 3 * i + 3)
            jac[..., rows, 3 * i : 3 * i + 3] = sub[..., i, :, :3]
            jac[..., rows, 3 * n + 2 * i : 3 * n + 2 * i + 2] = sub[..., i, :, 3:]
        return jac


def _rotation(phi, theta, psi):
    """Body-to-world rotation ``R_psi R_theta R_phi`` (batched)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    rows = [
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


class QuadcopterWindModel(DynamicsModel):
    """Quadcopter in wind with roll-pitch-yaw attitude, Euler-discretized.

    State: position (3), air-relative body velocity (3), roll, pitch, yaw,
    wind disturbance (3). Control: body rates (3) and collective thrust.
    Thrust acts along the body z axis; drag opposes the relative velocity.
    """

    def __init__(self, dt=0.02, mass=1.0, gravity=(0.0, 0.0, -9.81), air_density=1.225,
                 drag=(0.0, 0.0, 0.0), wind_A=None, wind_C=None, noise_cov=None):
        if noise_cov is None:
            noise_cov = np.zeros((12, 12))
        super().__init__(12, 4, dt, noise_cov)
        self.mass = float(mass)
        self.gravity = np.asarray(gravity, dtype=float)
        self.air_density = float(air_density)
        self.drag = np.asarray(drag, dtype=float)
        self.wind_A = np.zeros((3, 3)) if wind_A is None else np.asarray(wind_A, dtype=float)
        self.wind_C = np.zeros((3, 3)) if wind_C is None else np.asarray(wind_C, dtype=float)

    @property
    def hover_thrust(self):
        return self.mass * float(np.linalg.norm(self.gravity))

    def rates(self, tau):
        v = tau[..., 3:6]
        phi, theta, psi = tau[..., 6], tau[..., 7], tau[..., 8]
        d = tau[..., 9:12]
        w, thrust = tau[..., 12:15], tau[..., 15]

        R = _rotation(phi, theta, psi)
        pos_dot = np.einsum("...ij,...j->...i", R, v) + d @ self.wind_C.T

        g_body = np.einsum("...ji,j->...i", R, self.gravity)
        f = np.zeros_like(v)
        f[..., 2] = thrust
        speed = np.linalg.norm(v, axis=-1, keepdims=True)
        f_drag = -0.5 * self.air_density * self.drag * speed * v
        v_dot = np.cross(v, w) + g_body + (f + f_drag) / self.mass

        cf, sf = np.cos(phi), np.sin(phi)
        ct = np.cos(theta)
        ct = np.where(ct >= 0.0, np.maximum(ct, 1e-6), np.minimum(ct, -1e-6))
        tt = np.sin(theta) / ct
        wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
        euler_dot = np.stack([
            wx + sf * tt * wy + cf * tt * wz,
            cf * wy - sf * wz,
            (sf * wy + cf * wz) / ct,
        ], axis=-1)

        d_dot = d @ self.wind_A.T
        return np.concatenate([pos_dot, v_dot, euler_dot, d_dot], axis=-1)

    def _step(self, tau):
        return tau[..., :12] + self.dt * self.rates(tau)
