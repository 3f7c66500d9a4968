"""Block-tridiagonal symmetric positive-definite systems.

The Gauss-Newton information matrix of a Markov trajectory only couples
neighbouring time steps, so factorization, solves, and the diagonal blocks of
the inverse are all linear in the horizon.
"""

import numpy as np
import scipy.linalg as la

from ..gaussian import symmetrize


class BlockTridiagonal:
    """Symmetric matrix with diagonal blocks ``D[i]`` and super-diagonal blocks
    ``E[i]`` (coupling block ``i`` to ``i+1``). Block sizes may differ."""

    def __init__(self, D, E):
        if len(E) != len(D) - 1:
            raise ValueError("need one off-diagonal block per neighbouring pair")
        self.D = [np.asarray(d, dtype=float) for d in D]
        self.E = [np.asarray(e, dtype=float) for e in E]
        self._chol = None

    @property
    def sizes(self):
        return [d.shape[0] for d in self.D]

    def dense(self):
        off = np.cumsum([0] + self.sizes)
        out = np.zeros((off[-1], off[-1]))
        for i, d in enumerate(self.D):
            out[off[i]:off[i + 1], off[i]:off[i + 1]] = d
        for i, e in enumerate(self.E):
            out[off[i]:off[i + 1], off[i + 1]:off[i + 2]] = e
            out[off[i + 1]:off[i + 2], off[i]:off[i + 1]] = e.T
        return out

    def factor(self):
        """Schur recursion ``S_0 = D_0``, ``S_i = D_i - E_{i-1}^T S_{i-1}^-1 E_{i-1}``.

        Raises ``np.linalg.LinAlgError`` carrying ``.block`` if some ``S_i`` is
        not positive definite.
        """
        chol = []
        prev = None
        for i, d in enumerate(self.D):
            s = d
            if i > 0:
                w = la.solve_triangular(prev, self.E[i - 1], lower=True, check_finite=False)
                s = d - w.T @ w
            try:
                prev = np.linalg.cholesky(symmetrize(s))
            except np.linalg.LinAlgError as exc:
                err = np.linalg.LinAlgError(f"block {i} of the information matrix is not positive definite")
                err.block = i
                raise err from exc
            chol.append(prev)
        self._chol = chol
        return self

    def _factors(self):
        if self._chol is None:
            self.factor()
        return self._chol

    def _s_solve(self, i, b):
        return la.cho_solve((self._chol[i], True), b, check_finite=False)

    def solve(self, b):
        """Solve for a right-hand side given as a list of per-block vectors."""
        self._factors()
        n = len(self.D)
        y = [None] * n
        for i in range(n):
            r = np.asarray(b[i], dtype=float)
            if i > 0:
                r = r - self.E[i - 1].T @ self._s_solve(i - 1, y[i - 1])
            y[i] = r
        x = [None] * n
        for i in range(n - 1, -1, -1):
            r = y[i]
            if i < n - 1:
                r = r - self.E[i] @ x[i + 1]
            x[i] = self._s_solve(i, r)
        return x

    def diag_inverse(self):
        """Diagonal blocks of the inverse by backward selected inversion."""
        self._factors()
        n = len(self.D)
        out = [None] * n
        out[-1] = self._s_solve(n - 1, np.eye(self.sizes[-1]))
        for i in range(n - 2, -1, -1):
            s_inv = self._s_solve(i, np.eye(self.sizes[i]))
            g = s_inv @ self.E[i]
            out[i] = symmetrize(s_inv + g @ out[i + 1] @ g.T)
        return out
