import numpy as np
import pytest

from oracles import random_spd, riccati_lqr
from piic.dynamics import LinearModel, UnicycleModel
from piic.errors import NumericalError
from piic.ilqg import IlqgOptions, run_ilqg
from piic.objective import ObservationSpec, QuadraticStageCost, obstacle_constraint, trajectory_cost


def _lq_problem(seed, n=4, m=2, T=30):
    rng = np.random.default_rng(seed)
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    c = 0.1 * rng.standard_normal(n)
    Q, R, QT = random_spd(rng, n), random_spd(rng, m), random_spd(rng, n)
    xr, ur = rng.standard_normal(n), rng.standard_normal(m)
    model = LinearModel(A, B, 1e-4 * np.eye(n), c)
    spec = ObservationSpec(QuadraticStageCost(Q, R, QT, xr, ur), T)
    ref = riccati_lqr(A, B, c, Q, R, QT, xr, ur, xr, T)
    return model, spec, rng.standard_normal(n), ref


class TestIlqg:
    @pytest.mark.parametrize("seed", [0, 1])
    def test_recovers_riccati(self, seed):
        model, spec, x0, (K_ref, k_ref, (P, p, r)) = _lq_problem(seed)
        res = run_ilqg(model, spec, x0, np.zeros(2))
        np.testing.assert_allclose(res.policy.K, K_ref, atol=1e-8)
        np.testing.assert_allclose(res.policy.k, k_ref, atol=1e-8)
        np.testing.assert_allclose(res.costs[-1], x0 @ P @ x0 - 2 * p @ x0 + r, rtol=1e-10)
        # the first step already lands on the optimum
        np.testing.assert_allclose(res.costs[1], res.costs[-1], rtol=1e-10)

    def test_costs_nonincreasing_with_obstacle(self):
        model = UnicycleModel(0.05)
        cost = QuadraticStageCost(np.eye(3), 0.5 * np.eye(2), 10 * np.eye(3),
                                  np.array([2.0, 2.0, np.pi / 2]), np.zeros(2))
        spec = ObservationSpec(cost, 60, constraints=[obstacle_constraint((1.0, 0.9), 0.3, weight=20.0)])
        res = run_ilqg(model, spec, np.zeros(3), [1.0, 0.0])
        assert np.all(np.diff(res.costs) <= 0.0)
        assert res.costs[-1] < res.costs[0]
        X, U = res.policy.x_nom, res.policy.u_nom
        np.testing.assert_allclose(trajectory_cost(spec, X, U), res.costs[-1], rtol=1e-12)

    def test_control_hessian_failure(self):
        model = LinearModel(np.eye(2), np.zeros((2, 1)), 1e-4 * np.eye(2))
        spec = ObservationSpec(QuadraticStageCost(np.eye(2), np.zeros((1, 1)), np.eye(2),
                                                  np.ones(2), np.zeros(1)), 5)
        with pytest.raises(NumericalError):
            run_ilqg(model, spec, np.zeros(2), [0.0], IlqgOptions(reg_ladder=(0.0,)))
        # the default ladder regularizes the same problem
        run_ilqg(model, spec, np.zeros(2), [0.0])

    def test_policy_offsets_consistent(self):
        model, spec, x0, _ = _lq_problem(2)
        pol = run_ilqg(model, spec, x0, np.zeros(2)).policy
        x = np.ones(4)
        for t in (0, 10, 29):
            np.testing.assert_allclose(pol.control(x, t), pol.K[t] @ x + pol.k[t], atol=1e-12)
