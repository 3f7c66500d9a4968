"""Command line entry point: ``piic run|validate|sweep``."""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import EStepError, MStepError, NumericalError
from .harness import run_scenario, write_outputs
from .scenario import ALGORITHMS, ConfigError, bundled_scenarios, load_scenario

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

PARAM_ALIASES = {"gamma": "barrier.gamma", "eps": "barrier.eps"}


def _error(kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _overrides(args):
    out = {}
    if getattr(args, "algorithm", None):
        out["algorithm"] = args.algorithm
    if getattr(args, "seed", None) is not None:
        out["evaluation.seed"] = args.seed
    if getattr(args, "mc_runs", None) is not None:
        out["evaluation.mc_runs"] = args.mc_runs
    return out


def _run_one(args, overrides, out_dir):
    sc = load_scenario(args.config, overrides)
    res = run_scenario(sc)
    summary = write_outputs(res, out_dir, sc.seed, sc.mc_runs, args.emit_plots)
    print(f"{sc.name} [{sc.algorithm}] cost {summary['mean_cost']:.3f} +/- {summary['std_cost']:.3f}, "
          f"violations {summary['total_violations']}, converged {summary['converged']} -> {out_dir}")
    return summary


def cmd_run(args):
    out = Path(args.out) if args.out else Path("results") / Path(args.config).stem
    _run_one(args, _overrides(args), out)
    return 0


def cmd_validate(args):
    sc = load_scenario(args.config)
    print(f"{sc.name}: ok (model {type(sc.model).__name__}, T={sc.horizon}, "
          f"{len(sc.spec.constraints)} constraints, algorithm {sc.algorithm})")
    return 0


def cmd_sweep(args):
    key = PARAM_ALIASES.get(args.param, args.param)
    values = [float(v) for v in args.values.split(",")]
    base = Path(args.out) if args.out else Path("results") / f"{Path(args.config).stem}_sweep"
    rows = []
    for v in values:
        ov = _overrides(args)
        ov[key] = v
        s = _run_one(args, ov, base / f"{args.param}_{v:g}")
        rows.append({"value": v, "mean_cost": s["mean_cost"], "std_cost": s["std_cost"],
                     "total_violations": s["total_violations"], "converged": s["converged"]})
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "sweep.csv", "w") as fh:
        fh.write(f"{args.param},mean_cost,std_cost,total_violations,converged\n")
        for r in rows:
            fh.write(f"{r['value']!r},{r['mean_cost']!r},{r['std_cost']!r},"
                     f"{r['total_violations']},{r['converged']}\n")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="piic", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help=f"scenario YAML path or bundled name ({', '.join(bundled_scenarios())})")
        sp.add_argument("--algorithm", choices=ALGORITHMS)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mc-runs", type=int)
        sp.add_argument("--out")
        sp.add_argument("--emit-plots", action="store_true")

    common(sub.add_parser("run", help="infer a controller and evaluate it"))
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--config", required=True)
    s = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    common(s)
    s.add_argument("--param", required=True, help="gamma, eps, or a dotted key path")
    s.add_argument("--values", required=True, help="comma-separated values")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    handler = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep}[args.command]
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return handler(args)
    except ConfigError as exc:
        _error("config", "scenario validation failed", problems=exc.report())
        return EXIT_CONFIG
    except (EStepError, MStepError) as exc:
        _error("numerical", str(exc), t=getattr(exc, "t", None), iteration=getattr(exc, "iteration", None))
        return EXIT_NUMERICAL
    except (NumericalError, np.linalg.LinAlgError) as exc:
        _error("numerical", str(exc))
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
