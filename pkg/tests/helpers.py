"""Small problem builders shared across test modules."""

import numpy as np

from oracles import batch_linear_gaussian_posterior, random_spd
from piic.dynamics import LinearModel
from piic.gaussian import JointGaussian
from piic.objective import ObservationSpec, QuadraticStageCost
from piic.policy import AffineBasis, ControllerParams
from piic.smoothers import PolicyPrior


def random_linear_problem(rng, n_x=3, n_u=2, T=30, alpha=0.7):
    A = np.eye(n_x) + 0.1 * rng.standard_normal((n_x, n_x))
    B = rng.standard_normal((n_x, n_u))
    c = 0.1 * rng.standard_normal(n_x)
    noise = random_spd(rng, n_x, 0.1)
    Q, R, QT = random_spd(rng, n_x), random_spd(rng, n_u), random_spd(rng, n_x)
    xr, ur = rng.standard_normal(n_x), rng.standard_normal(n_u)
    spec = ObservationSpec(QuadraticStageCost(Q, R, QT, xr, ur), T, alpha=alpha)
    basis = AffineBasis(n_x)
    theta = 0.3 * rng.standard_normal((T, n_x + 1, n_u))
    Sd = np.stack([random_spd(rng, n_u, 0.5) for _ in range(T)])
    params = ControllerParams(basis, theta, Sd)
    mu0, S0 = rng.standard_normal(n_x), random_spd(rng, n_x, 0.2)
    prior = PolicyPrior(params, JointGaussian(mu0, S0))
    model = LinearModel(A, B, noise, c)

    K = [theta[t, :n_x].T for t in range(T)]
    k = [theta[t, n_x] for t in range(T)]
    Rrun = np.linalg.inv(alpha * np.block([[Q, np.zeros((n_x, n_u))], [np.zeros((n_u, n_x)), R]]))
    oracle = batch_linear_gaussian_posterior(
        A, B, c, noise, mu0, S0, K, k, Sd, np.eye(n_x + n_u), np.eye(n_x),
        [np.concatenate([xr, ur])] * T, xr, Rrun, np.linalg.inv(alpha * QT))
    return model, spec, prior, oracle
