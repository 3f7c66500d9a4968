"""Gaussian algebra shared by the smoothers and the parameter updates."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

DEFAULT_JITTER = (0.0, 1e-12, 1e-9, 1e-6)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized within the jitter budget."""


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def cholesky_psd(m, jitter_schedule=DEFAULT_JITTER):
    """Lower Cholesky factor of a symmetric PSD matrix with graded jitter.

    Tries ``m + eps * I`` for each ``eps`` in ``jitter_schedule`` (in order)
    and returns ``(L, eps)`` for the first one that factorizes.
    """
    m = symmetrize(m)
    eye = np.eye(m.shape[-1])
    for eps in jitter_schedule:
        try:
            return np.linalg.cholesky(m + eps * eye), eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"cholesky failed for all jitters {tuple(jitter_schedule)}; "
        f"condition number {np.linalg.cond(m):.3e}"
    )


def psd_factor(m):
    """Square-root factor ``L`` with ``L @ L.T == m`` for a PSD matrix.

    Diagonal matrices get an exact elementwise square root (zeros allowed),
    PD matrices a Cholesky factor, and singular ones an eigen-based factor.
    """
    m = symmetrize(m)
    if np.count_nonzero(m - np.diag(np.diag(m))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(m), 0.0, None)))
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(m)
        return v * np.sqrt(np.clip(w, 0.0, None))


def whitening_rows(w, tol=1e-14):
    """Rows ``Wh`` with ``Wh.T @ Wh == w`` that drop the null space of ``w``.

    Used to turn an observation with (possibly singular) precision ``w`` into
    one with identity noise.
    """
    w = symmetrize(w)
    d = np.diag(w)
    if np.count_nonzero(w - np.diag(d)) == 0:
        keep = d > tol * max(1.0, d.max(initial=0.0))
        rows = np.zeros((int(keep.sum()), w.shape[0]))
        rows[np.arange(rows.shape[0]), np.flatnonzero(keep)] = np.sqrt(d[keep])
        return rows
    lam, v = np.linalg.eigh(w)
    keep = lam > tol * max(1.0, lam.max(initial=0.0))
    return (v[:, keep] * np.sqrt(lam[keep])).T


def solve_psd(a, b, jitter_schedule=DEFAULT_JITTER):
    """Solve ``a x = b`` for symmetric PSD ``a`` using a jittered Cholesky."""
    L, _ = cholesky_psd(a, jitter_schedule)
    return la.cho_solve((L, True), b, check_finite=False)


@dataclass(frozen=True)
class BlockIndex:
    """A named sub-block of a Gaussian vector, as (offset, length) runs."""

    offsets: tuple
    lengths: tuple

    def __post_init__(self):
        if len(self.offsets) != len(self.lengths):
            raise ValueError("offsets and lengths must have equal length")
        idx = self.indices
        if len(np.unique(idx)) != len(idx):
            raise ValueError("blocks overlap")

    @classmethod
    def span(cls, offset, length):
        return cls((int(offset),), (int(length),))

    @classmethod
    def of(cls, indices):
        indices = [int(i) for i in indices]
        return cls(tuple(indices), tuple(1 for _ in indices))

    @property
    def indices(self):
        parts = [np.arange(o, o + n) for o, n in zip(self.offsets, self.lengths)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def check(self, dim):
        idx = self.indices
        if idx.size and (idx.min() < 0 or idx.max() >= dim):
            raise IndexError(f"block {idx.tolist()} out of range for dimension {dim}")
        return idx


@dataclass(frozen=True)
class JointGaussian:
    """Mean / covariance pair over a vector of dimension ``d``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.array(self.mean, dtype=float))
        cov = np.atleast_2d(np.array(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size

    def is_valid(self, rtol=1e-12, psd_tol=1e-10):
        scale = max(np.linalg.norm(self.cov), 1e-300)
        if np.max(np.abs(self.cov - self.cov.T), initial=0.0) > rtol * scale:
            return False
        return bool(np.linalg.eigvalsh(symmetrize(self.cov)).min(initial=0.0) >= -psd_tol * scale)


def marginal(g, b):
    idx = b.check(g.dim)
    return JointGaussian(g.mean[idx], g.cov[np.ix_(idx, idx)])


def condition(g, b_obs, value, jitter_schedule=DEFAULT_JITTER):
    """Condition ``g`` on ``x[b_obs] == value``.

    The result keeps the full dimension: the observed block is pinned to
    ``value`` with zero covariance, the rest carries the usual conditional
    mean ``mu_a + S_ab S_bb^-1 (value - mu_b)`` and Schur-complement covariance.
    """
    obs = b_obs.check(g.dim)
    rest = np.setdiff1d(np.arange(g.dim), obs)
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if value.shape != obs.shape:
        raise ValueError(f"value has shape {value.shape}, block has {obs.size} entries")

    mean = np.array(g.mean)
    cov = np.zeros_like(g.cov)
    mean[obs] = value
    if rest.size:
        s_bb = g.cov[np.ix_(obs, obs)]
        s_ab = g.cov[np.ix_(rest, obs)]
        L, _ = cholesky_psd(s_bb, jitter_schedule)
        gain = la.cho_solve((L, True), s_ab.T, check_finite=False).T
        mean[rest] = g.mean[rest] + gain @ (value - g.mean[obs])
        cov[np.ix_(rest, rest)] = symmetrize(g.cov[np.ix_(rest, rest)] - gain @ s_ab.T)
    return JointGaussian(mean, cov)


def floor_cov(m, floor):
    """Clip the eigenvalues of a symmetric matrix (or stack) from below at ``floor``."""
    m = symmetrize(m)
    off = m - np.einsum("...ii->...i", m)[..., None] * np.eye(m.shape[-1])
    if not np.any(off):
        d = np.clip(np.einsum("...ii->...i", m), floor, None)
        return d[..., None] * np.eye(m.shape[-1])
    w, v = np.linalg.eigh(m)
    return (v * np.clip(w, floor, None)[..., None, :]) @ np.swapaxes(v, -1, -2)
