import numpy as np
import pytest

from piic.gaussian import (BlockIndex, FactorizationError, JointGaussian, cholesky_psd, condition,
                           floor_cov, marginal, whitening_rows)


class TestMarginal:
    def test_diagonal_block(self):
        g = JointGaussian([1.0, 2.0], np.diag([3.0, 4.0]))
        m = marginal(g, BlockIndex.of([0]))
        np.testing.assert_allclose(m.mean, [1.0])
        np.testing.assert_allclose(m.cov, [[3.0]])

    def test_whole_vector(self):
        g = JointGaussian([1.0, 2.0], [[2.0, 1.0], [1.0, 2.0]])
        m = marginal(g, BlockIndex.span(0, 2))
        np.testing.assert_array_equal(m.mean, g.mean)
        np.testing.assert_array_equal(m.cov, g.cov)

    def test_submatrix(self):
        g = JointGaussian([1.0, 2.0], [[2.0, 1.0], [1.0, 2.0]])
        m = marginal(g, BlockIndex.of([1]))
        np.testing.assert_allclose(m.mean, [2.0])
        np.testing.assert_allclose(m.cov, [[2.0]])

    def test_out_of_range(self):
        g = JointGaussian([1.0, 2.0], np.eye(2))
        with pytest.raises(IndexError):
            marginal(g, BlockIndex.of([2]))

    def test_overlapping_blocks_rejected(self):
        with pytest.raises(ValueError):
            BlockIndex((0, 1), (2, 2))


class TestCondition:
    def test_independent_blocks(self):
        g = JointGaussian([1.0, 2.0], np.diag([3.0, 4.0]))
        c = condition(g, BlockIndex.of([1]), [7.0])
        np.testing.assert_allclose(c.mean, [1.0, 7.0])
        np.testing.assert_allclose(c.cov, np.diag([3.0, 0.0]))

    def test_schur_complement(self):
        g = JointGaussian([0.5, -1.0], [[2.0, 1.0], [1.0, 2.0]])
        c = condition(g, BlockIndex.of([1]), [-1.0])
        np.testing.assert_allclose(c.mean[0], 0.5)
        np.testing.assert_allclose(c.cov[0, 0], 1.5)

    def test_schur_against_inverse(self):
        # conditional precision equals the corresponding block of the joint precision
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 4))
        S = a @ a.T + np.eye(4)
        g = JointGaussian(rng.standard_normal(4), S)
        c = condition(g, BlockIndex.of([2, 3]), [0.1, 0.2])
        P = np.linalg.inv(S)
        np.testing.assert_allclose(np.linalg.inv(c.cov[:2, :2]), P[:2, :2], rtol=1e-10)

    def test_full_vector_is_degenerate(self):
        g = JointGaussian([1.0, 2.0], [[2.0, 1.0], [1.0, 2.0]])
        c = condition(g, BlockIndex.span(0, 2), [3.0, 4.0])
        np.testing.assert_allclose(c.mean, [3.0, 4.0])
        np.testing.assert_array_equal(c.cov, np.zeros((2, 2)))

    def test_singular_block_raises(self):
        g = JointGaussian([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(FactorizationError, match="condition number"):
            condition(g, BlockIndex.of([1]), [0.0])


class TestCholesky:
    def test_identity(self):
        L, eps = cholesky_psd(np.eye(3))
        np.testing.assert_array_equal(L, np.eye(3))
        assert eps == 0.0

    def test_diagonal(self):
        L, _ = cholesky_psd(np.diag([4.0, 9.0]))
        np.testing.assert_allclose(L, np.diag([2.0, 3.0]))

    def test_rank_one_uses_smallest_working_jitter(self):
        m = np.ones((2, 2))
        schedule = (0.0, 1e-12, 1e-9, 1e-6)
        L, eps = cholesky_psd(m, schedule)
        # oracle: the matrix is singular (eigenvalue 0) so eps > 0; every smaller jitter fails
        assert np.linalg.eigvalsh(m).min() < 1e-15
        assert eps > 0.0
        for smaller in schedule[: schedule.index(eps)]:
            with pytest.raises(np.linalg.LinAlgError):
                np.linalg.cholesky(m + smaller * np.eye(2))
        np.testing.assert_allclose(L @ L.T, m + eps * np.eye(2), atol=1e-10 * np.linalg.norm(m))

    def test_all_jitters_fail(self):
        with pytest.raises(FactorizationError):
            cholesky_psd(-np.eye(2))

    def test_symmetrizes_input(self):
        m = np.array([[2.0, 1.0 + 1e-13], [1.0, 2.0]])
        L, _ = cholesky_psd(m)
        np.testing.assert_allclose(L @ L.T, 0.5 * (m + m.T), atol=1e-14)


class TestHelpers:
    def test_whitening_rows_drops_null_space(self):
        w = np.diag([4.0, 0.0, 1.0])
        rows = whitening_rows(w)
        assert rows.shape == (2, 3)
        np.testing.assert_allclose(rows.T @ rows, w)

    def test_whitening_rows_dense(self):
        v = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        w = v @ np.diag([3.0, 0.0]) @ v.T
        rows = whitening_rows(w)
        assert rows.shape == (1, 2)
        np.testing.assert_allclose(rows.T @ rows, w, atol=1e-14)

    def test_floor_cov(self):
        m = np.array([[1.0, 0.0], [0.0, -1e-3]])
        np.testing.assert_allclose(floor_cov(m, 1e-8), np.diag([1.0, 1e-8]))
        v = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        dense = v @ np.diag([2.0, 0.0]) @ v.T
        np.testing.assert_allclose(np.linalg.eigvalsh(floor_cov(dense, 1e-6)), [1e-6, 2.0])

    def test_joint_gaussian_validity(self):
        assert JointGaussian([0, 0], np.eye(2)).is_valid()
        assert not JointGaussian([0, 0], [[1.0, 0.0], [0.0, -1.0]]).is_valid()
        assert not JointGaussian([0, 0], [[1.0, 0.5], [0.0, 1.0]]).is_valid()
        with pytest.raises(ValueError):
            JointGaussian([0, 0, 0], np.eye(2))
