"""Closed-loop sampling of learned controllers and Monte Carlo statistics."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, ValidationError
from .gaussian import psd_factor
from .ilqg import AffinePolicy
from .objective import constraint_values, stage_cost
from .policy import ControllerParams


@dataclass
class RolloutRecord:
    seed: int
    states: np.ndarray
    controls: np.ndarray
    stage_costs: np.ndarray
    constraint_values: np.ndarray
    cost: float
    violations: np.ndarray
    diverged_at: Optional[int] = None

    @property
    def total_violations(self):
        return int(self.violations.sum())


@dataclass
class McSummary:
    mean_cost: float
    std_cost: float
    total_violations: int
    violations_per_constraint: np.ndarray
    records: list = field(repr=False, default_factory=list)
    n_diverged: int = 0
    std_degenerate: bool = False
    diverged_violations: int = 0

    @property
    def n_runs(self):
        return len(self.records)


def _policy_sampler(policy, policy_noise):
    if isinstance(policy, AffinePolicy):
        return policy.control, None
    if isinstance(policy, ControllerParams):
        factors = None
        if policy_noise:
            factors = np.array([psd_factor(s) for s in policy.sigma])
        return policy.mean_control, factors
    raise ValidationError(f"unsupported policy type {type(policy).__name__}")


def rollout(model, policy, x0, spec, seed, policy_noise=True):
    """Sample one closed-loop trajectory.

    The initial state is drawn from ``x0`` (a Gaussian). A PIIC controller
    samples its control noise when ``policy_noise`` is set; an ILQG policy is
    applied deterministically. Costs and constraint values use ``spec``, which
    may differ from the one used during inference.
    """
    T = spec.horizon
    n_x, n_u = model.n_x, model.n_u
    if policy.horizon < T:
        raise ValidationError(f"policy horizon {policy.horizon} shorter than {T}")
    mean_control, factors = _policy_sampler(policy, policy_noise)
    rng = np.random.default_rng(seed)
    X = np.full((T + 1, n_x), np.nan)
    U = np.full((T, n_u), np.nan)
    X[0] = np.asarray(x0.mean) + psd_factor(x0.cov) @ rng.standard_normal(n_x)
    diverged = None
    try:
        for t in range(T):
            u = mean_control(X[t], t)
            if factors is not None:
                u = u + factors[t] @ rng.standard_normal(n_u)
            U[t] = u
            x_next = model.sample_step(np.concatenate([X[t], u]), rng.standard_normal(n_x), t)
            if not np.all(np.isfinite(x_next)):
                raise DivergenceError("non-finite state", step=t + 1)
            X[t + 1] = x_next
    except (DivergenceError, ValidationError, FloatingPointError) as exc:
        diverged = getattr(exc, "step", None) or t

    n_c = len(spec.constraints)
    costs = np.full(T + 1, np.nan)
    kvals = np.full((T + 1, n_c), np.nan)
    # steps before a divergence are still scored so their violations count
    n_ok = T if diverged is None else max(0, min(int(diverged), T) - 1)
    n_ok = min(n_ok, int(np.sum(np.all(np.isfinite(U), axis=1))))
    if n_ok:
        taus = np.concatenate([X[:n_ok], U[:n_ok]], axis=-1)
        costs[:n_ok] = stage_cost(spec, taus, 0)
        if n_c:
            kvals[:n_ok] = np.stack([c.value(taus) for c in spec.constraints], axis=-1)
    if diverged is None:
        costs[T] = stage_cost(spec, X[T], T)
        if n_c:
            terminal = [i for i, c in enumerate(spec.constraints) if c.state_only]
            kvals[T, terminal] = constraint_values(spec, X[T], T)
    violations = np.sum(kvals <= 0.0, axis=0)
    total = float(costs.sum()) if diverged is None else np.inf
    return RolloutRecord(int(seed), X, U, costs, kvals, total, violations, diverged)


def summarize(records):
    ok = [r for r in records if r.diverged_at is None]
    costs = np.array([r.cost for r in ok])
    n = costs.size
    mean = float(costs.mean()) if n else float("nan")
    std = float(costs.std(ddof=1)) if n > 1 else 0.0
    viol = (np.sum([r.violations for r in ok], axis=0) if ok
            else np.zeros(records[0].violations.shape, dtype=int))
    lost = sum(r.total_violations for r in records if r.diverged_at is not None)
    return McSummary(mean, std, int(np.sum(viol)), np.asarray(viol), list(records),
                     len(records) - n, n <= 1, lost)


def monte_carlo(model, policy, x0, spec, n_runs, base_seed=0, policy_noise=True):
    """Rollouts with seeds ``base_seed + i``; diverged runs are excluded from the
    statistics and counted in ``n_diverged``."""
    if n_runs < 1:
        raise ValidationError("need at least one Monte Carlo run")
    records = [rollout(model, policy, x0, spec, base_seed + i, policy_noise) for i in range(n_runs)]
    return summarize(records)
