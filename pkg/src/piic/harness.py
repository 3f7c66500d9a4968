"""Run a scenario end to end and write its artifacts."""

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import PiicResult, Problem, run_piic
from .ilqg import IlqgResult, run_ilqg
from .rollout import rollout, summarize

log = logging.getLogger(__name__)

THREADS_ENV = "PIIC_THREADS"


@dataclass
class ScenarioResult:
    scenario: object
    algorithm: str
    inference: object
    policy: object
    summary: object
    runtime: float


def solve(scenario):
    """Run the configured inference; returns a PiicResult or IlqgResult."""
    if scenario.algorithm == "ilqg":
        return run_ilqg(scenario.model, scenario.spec, scenario.x0.mean, scenario.u_init,
                        scenario.ilqg_options)
    problem = Problem(scenario.model, scenario.spec, scenario.x0)
    return run_piic(problem, scenario.init, scenario.options)


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def evaluate(scenario, policy, n_runs=None, seed=None, policy_noise=None):
    """Monte Carlo evaluation on the scenario's simulation constraints.

    Rollouts can be spread over ``PIIC_THREADS`` workers; results are ordered
    by seed so the output does not depend on the thread count.
    """
    n_runs = scenario.mc_runs if n_runs is None else n_runs
    seed = scenario.seed if seed is None else seed
    noise = scenario.policy_noise if policy_noise is None else policy_noise
    seeds = [seed + i for i in range(n_runs)]

    def one(s):
        return rollout(scenario.model, policy, scenario.x0, scenario.eval_spec, s, noise)

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, seeds))
    else:
        records = [one(s) for s in seeds]
    return summarize(records)


def run_scenario(scenario, n_runs=None, seed=None):
    start = time.perf_counter()
    result = solve(scenario)
    if isinstance(result, IlqgResult):
        policy = result.policy
    else:
        policy = scenario.evaluation_policy(result.params)
    summary = evaluate(scenario, policy, n_runs, seed)
    return ScenarioResult(scenario, scenario.algorithm, result, policy, summary,
                          time.perf_counter() - start)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def summary_dict(res, seed, n_runs):
    sc, s, inf = res.scenario, res.summary, res.inference
    names = [c.name for c in sc.eval_spec.constraints]
    out = {
        "scenario": sc.name,
        "algorithm": res.algorithm,
        "seed": seed,
        "mc_runs": n_runs,
        "horizon": sc.horizon,
        "policy_noise": bool(sc.policy_noise) if res.algorithm != "ilqg" else False,
        "mean_cost": s.mean_cost,
        "std_cost": s.std_cost,
        "std_degenerate": s.std_degenerate,
        "total_violations": s.total_violations,
        "violations": {n: int(v) for n, v in zip(names, s.violations_per_constraint)},
        "n_diverged": s.n_diverged,
        "diverged_violations": s.diverged_violations,
        "converged": bool(inf.converged),
        "flagged": bool(inf.flagged),
    }
    if isinstance(inf, PiicResult):
        out.update(iterations=len(inf.log), alpha=float(inf.alpha))
    else:
        out.update(iterations=inf.iterations, nominal_cost=float(inf.costs[-1]))
    return out


def write_outputs(res, out_dir, seed, n_runs, emit_plots=False):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = res.scenario
    n_x, n_u = sc.model.n_x, sc.model.n_u
    names = [c.name for c in sc.eval_spec.constraints]

    summary = summary_dict(res, seed, n_runs)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    header = (["run", "seed", "t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)]
              + ["stage_cost"] + [f"K_{n}" for n in names])
    rows = []
    for run, rec in enumerate(res.summary.records):
        for t in range(rec.states.shape[0]):
            u = rec.controls[t] if t < rec.controls.shape[0] else np.full(n_u, np.nan)
            rows.append([run, rec.seed, t, *rec.states[t], *u, rec.stage_costs[t],
                         *rec.constraint_values[t]])
    _write_csv(out / "runs.csv", header, rows)

    inf = res.inference
    if isinstance(inf, PiicResult):
        _write_csv(out / "iterations.csv",
                   ["iteration", "alpha", "surrogate_old", "surrogate_new", "change", "mean_cost"],
                   [[r.iteration, r.alpha, r.surrogate_old, r.surrogate_new, r.change, r.mean_cost]
                    for r in inf.log])
        mean = inf.moments.state_means
        cov = inf.moments.state_covs
    else:
        _write_csv(out / "iterations.csv", ["iteration", "cost"],
                   [[i, c] for i, c in enumerate(inf.costs)])
        mean = inf.policy.x_nom
        cov = np.zeros((mean.shape[0], n_x, n_x))
    mc = np.stack([r.states for r in res.summary.records if r.diverged_at is None]) \
        if res.summary.n_diverged < res.summary.n_runs else None
    header = (["t"] + [f"mean_x{i}" for i in range(n_x)] + ["var_x0", "cov_x0x1", "var_x1"]
              + [f"mc_mean_x{i}" for i in range(n_x)])
    rows = []
    for t in range(mean.shape[0]):
        mc_mean = mc[:, t].mean(axis=0) if mc is not None else np.full(n_x, np.nan)
        rows.append([t, *mean[t], cov[t, 0, 0], cov[t, 0, 1], cov[t, 1, 1], *mc_mean])
    _write_csv(out / "trajectory_mean.csv", header, rows)

    if emit_plots:
        from .plots import plot_trajectories
        plot_trajectories(res, out / "trajectory.svg")
    return summary
