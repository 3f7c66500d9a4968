"""Scenario files: YAML documents describing a benchmark problem end to end.

Matrices may be written as nested lists, ``{shape: [r, c], data: [...]}``
(row-major), ``{diag: [...]}``, ``{eye: n, scale: s}``, or a bare scalar
(a multiple of the identity of the expected size).
"""

import copy
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .dynamics import LinearModel, MultiUnicycleModel, QuadcopterWindModel, UnicycleModel
from .em import PiicOptions
from .errors import ValidationError
from .gaussian import JointGaussian
from .ilqg import IlqgOptions
from .objective import (ObservationSpec, QuadraticStageCost, box_constraint, formation_block,
                        incidence_matrix, obstacle_constraint)
from .policy import AffineBasis, ControllerParams, ObstacleAwareBasis, StructureMask
from .smoothers import GaussNewtonConfig, SigmaPointConfig

ALGORITHMS = ("upiic", "fgpiic", "ilqg")
BUNDLED = Path(__file__).parent / "scenarios"


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponents without a sign (``1.0e5``) as floats."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


class ConfigError(ValidationError):
    """All problems found in a scenario file, as ``(key path, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{k}: {m}" for k, m in self.problems]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))

    def report(self):
        return [{"key": k, "message": m} for k, m in self.problems]


class _Reader:
    """Collects validation problems instead of stopping at the first one."""

    def __init__(self, raw):
        self.raw = raw
        self.problems = []

    def fail(self, path, msg):
        self.problems.append((path, msg))

    def get(self, path, default=KeyError):
        node = self.raw
        for part in path.split("."):
            if isinstance(node, dict) and part in node:
                node = node[part]
            elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
                node = node[int(part)]
            else:
                if default is KeyError:
                    self.fail(path, "missing required key")
                    return None
                return default
        return node

    def number(self, path, default=KeyError, positive=False, nonneg=False, integer=False):
        v = self.get(path, default)
        if v is None:
            return None
        try:
            v = int(v) if integer else float(v)
        except (TypeError, ValueError):
            self.fail(path, f"expected a number, got {v!r}")
            return None
        if positive and not v > 0:
            self.fail(path, "must be positive")
        if nonneg and v < 0:
            self.fail(path, "must be non-negative")
        return v

    def vector(self, path, n=None, default=KeyError):
        v = self.get(path, default)
        if v is None:
            return None
        try:
            v = np.asarray(v, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            self.fail(path, "expected a list of numbers")
            return None
        if n is not None and v.size != n:
            self.fail(path, f"expected {n} entries, got {v.size}")
            return None
        return v

    def matrix(self, path, n, default=KeyError, psd=True):
        v = self.get(path, default)
        if v is None:
            return None
        try:
            m = parse_matrix(v, n)
        except (TypeError, ValueError) as exc:
            self.fail(path, str(exc))
            return None
        if m.shape != (n, n):
            self.fail(path, f"expected a {n}x{n} matrix, got {m.shape}")
            return None
        if psd:
            sym = 0.5 * (m + m.T)
            if not np.allclose(m, sym) or np.linalg.eigvalsh(sym).min() < -1e-10 * max(1.0, np.abs(m).max()):
                self.fail(path, "must be symmetric positive semi-definite")
                return None
        return m


def parse_matrix(v, n=None):
    if isinstance(v, (int, float)):
        if n is None:
            raise ValueError("scalar matrix needs a known size")
        return float(v) * np.eye(n)
    if isinstance(v, dict):
        if "diag" in v:
            return np.diag(np.asarray(v["diag"], dtype=float))
        if "eye" in v:
            return float(v.get("scale", 1.0)) * np.eye(int(v["eye"]))
        if "shape" in v and "data" in v:
            return np.asarray(v["data"], dtype=float).reshape(v["shape"])
        raise ValueError("matrix mapping needs 'diag', 'eye', or 'shape' + 'data'")
    return np.atleast_2d(np.asarray(v, dtype=float))


@dataclass
class Scenario:
    name: str
    algorithm: str
    model: object
    spec: ObservationSpec
    eval_spec: ObservationSpec
    x0: JointGaussian
    init: Optional[ControllerParams]
    options: PiicOptions
    ilqg_options: IlqgOptions
    u_init: np.ndarray
    mc_runs: int
    seed: int
    policy_noise: bool
    eval_radii: Optional[np.ndarray] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self):
        return self.spec.horizon

    @property
    def smoother(self):
        return "map" if self.algorithm == "fgpiic" else "unscented"

    def evaluation_policy(self, params):
        """Policy used for simulation: an obstacle-aware basis is told the
        simulated obstacle radii."""
        if (self.eval_radii is not None and isinstance(params, ControllerParams)
                and isinstance(params.basis, ObstacleAwareBasis)):
            return replace(params, basis=params.basis.with_radii(self.eval_radii))
        return params


def _model(r, n_agents):
    kind = r.get("model.type")
    dt = r.number("model.dt", positive=True)
    if kind is None or dt is None:
        return None
    if kind == "unicycle":
        noise = r.matrix("model.process_noise", 3, default=0.0)
        return UnicycleModel(dt, noise) if noise is not None else None
    if kind == "multi_unicycle":
        noise = r.matrix("model.process_noise", 3, default=0.0)
        if noise is None:
            return None
        return MultiUnicycleModel(n_agents, dt, np.kron(np.eye(n_agents), noise))
    if kind == "quadcopter":
        noise = r.matrix("model.process_noise", 12, default=0.0)
        kw = dict(
            mass=r.number("model.mass", default=1.0, positive=True),
            gravity=r.vector("model.gravity", 3, default=[0.0, 0.0, -9.81]),
            air_density=r.number("model.air_density", default=1.225, nonneg=True),
            drag=r.vector("model.drag", 3, default=[0.0, 0.0, 0.0]),
            wind_A=r.matrix("model.wind_A", 3, default=0.0, psd=False),
            wind_C=r.matrix("model.wind_C", 3, default=0.0, psd=False),
        )
        if noise is None or any(v is None for v in kw.values()):
            return None
        return QuadcopterWindModel(dt, noise_cov=noise, **kw)
    if kind == "linear":
        A = r.get("model.A")
        B = r.get("model.B")
        if A is None or B is None:
            return None
        A, B = parse_matrix(A), parse_matrix(B)
        noise = r.matrix("model.process_noise", A.shape[0], default=0.0)
        c = r.vector("model.c", A.shape[0], default=np.zeros(A.shape[0]))
        if noise is None or c is None:
            return None
        return LinearModel(A, B, noise, c, dt)
    r.fail("model.type", f"unknown model type {kind!r}")
    return None


def _obstacles(r, key, n_agents, gamma, eps, xy_stride):
    out = []
    obs = r.get(key, default=[]) or []
    if not isinstance(obs, list):
        r.fail(key, "expected a list")
        return out
    for k, _ in enumerate(obs):
        p = f"{key}.{k}"
        center = r.vector(f"{p}.center", 2)
        radius = r.number(f"{p}.radius", nonneg=True)
        rs = r.number(f"{p}.safety_radius", default=0.0, nonneg=True)
        w = r.number(f"{p}.weight", nonneg=True)
        if None in (radius, rs, w) or center is None:
            continue
        for i in range(n_agents):
            out.append(dict(center=center, radius=radius, rs=rs, weight=w,
                            xy=(xy_stride * i, xy_stride * i + 1),
                            name=f"obstacle{k + 1}" + (f"_agent{i + 1}" if n_agents > 1 else "")))
    return out


def _build_constraints(obstacles, limits, gamma, eps, radii=None):
    cons = []
    for j, o in enumerate(obstacles):
        radius = o["radius"] if radii is None else radii[j]
        cons.append(obstacle_constraint(o["center"], radius, o["rs"], o["xy"], o["weight"], gamma, eps,
                                        name=o["name"]))
    for lim in limits:
        cons.extend(box_constraint(lim["index"], lim["lo"], lim["hi"], lim["weight"], gamma, eps,
                                   name=lim["name"]))
    return cons


def load_scenario(source, overrides=None):
    """Parse and validate a scenario from a path, YAML string, or mapping.

    ``overrides`` maps dotted key paths to values and is applied before
    validation. Raises :class:`ConfigError` listing every problem found.
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        path = Path(source)
        if not path.exists() and (BUNDLED / f"{source}.yaml").exists():
            path = BUNDLED / f"{source}.yaml"
        try:
            raw = yaml.load(path.read_text(), Loader=_Loader)
        except OSError as exc:
            raise ConfigError([("<file>", str(exc))]) from exc
        except yaml.YAMLError as exc:
            raise ConfigError([("<file>", f"YAML parse error: {exc}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "scenario must be a mapping")])
    for key, value in (overrides or {}).items():
        set_path(raw, key, value)

    r = _Reader(raw)
    name = str(r.get("name", default="scenario"))
    algorithm = r.get("algorithm", default="upiic")
    if algorithm not in ALGORITHMS:
        r.fail("algorithm", f"must be one of {ALGORITHMS}")
    T = r.number("horizon", integer=True, positive=True)
    n_agents = r.number("model.agents", default=1, integer=True, positive=True) or 1
    model = _model(r, n_agents)
    if model is None or T is None:
        raise ConfigError(r.problems or [("model", "could not build model")])
    n_x, n_u = model.n_x, model.n_u

    x0_mean = r.vector("initial_state.mean", n_x)
    x0_cov = r.matrix("initial_state.cov", n_x)
    Q = r.matrix("cost.Q", n_x)
    R = r.matrix("cost.R", n_u)
    QT = r.matrix("cost.Q_T", n_x)
    x_target = r.vector("cost.x_target", n_x)
    u_target = r.vector("cost.u_target", n_u, default=np.zeros(n_u))

    gamma = r.number("barrier.gamma", default=1.0, positive=True)
    eps = r.number("barrier.eps", default=1.0, positive=True)
    stride = 3 if model.__class__ in (UnicycleModel, MultiUnicycleModel) else n_x
    obstacles = _obstacles(r, "obstacles", n_agents, gamma, eps, stride)
    limits = []
    for k, _ in enumerate(r.get("control_limits", default=[]) or []):
        p = f"control_limits.{k}"
        idx = r.number(f"{p}.control", integer=True, nonneg=True)
        lo, hi = r.number(f"{p}.lo"), r.number(f"{p}.hi")
        w = r.number(f"{p}.weight", nonneg=True)
        if None in (idx, lo, hi, w):
            continue
        if lo >= hi:
            r.fail(p, f"lo ({lo}) must be below hi ({hi})")
            continue
        per_agent = n_u // n_agents
        if idx >= per_agent:
            r.fail(f"{p}.control", f"control index must be below {per_agent}")
            continue
        for i in range(n_agents):
            limits.append(dict(index=n_x + per_agent * i + idx, lo=lo, hi=hi, weight=w,
                               name=f"limit{k + 1}" + (f"_agent{i + 1}" if n_agents > 1 else "")))

    blocks = []
    if r.get("formation", default=None) is not None:
        edges = r.get("formation.edges")
        delta = r.vector("formation.delta_star")
        wf = r.get("formation.weight")
        if edges is not None and delta is not None and wf is not None:
            try:
                B_inc = incidence_matrix(n_agents, [tuple(int(a) for a in e) for e in edges])
                m = 3 * len(edges)
                W = parse_matrix(wf, m)
                blocks.append(formation_block(B_inc, delta, W, 3))
            except (ValueError, TypeError, IndexError) as exc:
                r.fail("formation", str(exc))

    # policy
    basis_name = r.get("policy.basis", default="affine")
    u0 = r.vector("policy.initial_control", n_u, default=np.zeros(n_u))
    sig0 = r.matrix("policy.initial_cov", n_u, default=100.0)
    time_invariant = bool(r.get("policy.time_invariant", default=False))
    basis = None
    if basis_name == "affine":
        basis = AffineBasis(n_x)
    elif basis_name == "obstacle_aware":
        if not obstacles:
            r.fail("policy.basis", "obstacle_aware basis needs at least one obstacle")
        else:
            basis = ObstacleAwareBasis(n_x, [o["center"] for o in obstacles],
                                       [o["radius"] for o in obstacles], obstacles[0]["xy"])
    else:
        r.fail("policy.basis", f"unknown basis {basis_name!r}")
    mask = None
    structure = r.get("policy.structure", default="centralized")
    if basis is not None and structure != "centralized":
        mask = _structure_mask(r, structure, n_agents, n_x, n_u, basis)

    # evaluation
    mc_runs = r.number("evaluation.mc_runs", default=50, integer=True, positive=True)
    seed = r.number("evaluation.seed", default=0, integer=True, nonneg=True)
    policy_noise = bool(r.get("evaluation.policy_noise", default=True))
    scale = r.number("evaluation.obstacle_radius_scale", default=1.0, positive=True)

    em = r.get("em", default={}) or {}
    sp = em.get("sigma_points", {}) if isinstance(em, dict) else {}
    gn = em.get("gauss_newton", {}) if isinstance(em, dict) else {}
    try:
        sigma_cfg = SigmaPointConfig(**sp)
        gn_cfg = GaussNewtonConfig(**gn)
        opts = PiicOptions(
            smoother="map" if algorithm == "fgpiic" else "unscented",
            time_invariant=time_invariant, mask=mask,
            threshold=float(em.get("threshold", 1e-3)), max_iter=int(em.get("max_iter", 100)),
            ridge=float(em.get("ridge", 1e-9)), alpha0=float(em.get("alpha0", 1.0)),
            alpha_numerator=str(em.get("alpha_numerator", "exact")),
            learn_alpha=bool(em.get("learn_alpha", True)),
            sigma_points=sigma_cfg, gauss_newton=gn_cfg)
    except (TypeError, ValueError) as exc:
        r.fail("em", str(exc))
        opts = None
    il = r.get("ilqg", default={}) or {}
    try:
        ilqg_opts = IlqgOptions(max_iter=int(il.get("max_iter", 200)), tol=float(il.get("tol", 1e-9)))
    except (TypeError, ValueError) as exc:
        r.fail("ilqg", str(exc))
        ilqg_opts = None

    if r.problems:
        raise ConfigError(r.problems)
    try:
        cost = QuadraticStageCost(Q, R, QT, x_target, u_target)
        spec = ObservationSpec(cost, T, _build_constraints(obstacles, limits, gamma, eps), blocks)
        eval_radii = None
        eval_spec = spec
        if scale != 1.0:
            eval_radii = np.array([o["radius"] * scale for o in obstacles])
            eval_spec = replace(spec, constraints=tuple(
                _build_constraints(obstacles, limits, gamma, eps, eval_radii)))
        init = ControllerParams.initial(basis, T, u0, sig0, time_invariant, mask)
    except ValidationError as exc:
        raise ConfigError([("<scenario>", str(exc))]) from exc
    return Scenario(name, algorithm, model, spec, eval_spec, JointGaussian(x0_mean, x0_cov), init,
                    opts, ilqg_opts, u0, mc_runs, seed, policy_noise, eval_radii, raw)


def _structure_mask(r, structure, n_agents, n_x, n_u, basis):
    """Mask from ``{access: {agent: [agents it reads]}}`` (1-based, self implied)."""
    if not isinstance(structure, dict) or "access" not in structure:
        r.fail("policy.structure", "expected 'centralized' or a mapping with 'access'")
        return None
    access = structure["access"]
    sx, su = n_x // n_agents, n_u // n_agents
    rows = [range(sx * i, sx * (i + 1)) for i in range(n_agents)]
    cols = [range(su * j, su * (j + 1)) for j in range(n_agents)]
    flow = set()
    for j in range(n_agents):
        flow.add((j, j))
        for i in access.get(j + 1, access.get(str(j + 1), [])):
            if not 1 <= int(i) <= n_agents:
                r.fail(f"policy.structure.access.{j + 1}", f"agent {i} out of range")
                continue
            flow.add((int(i) - 1, j))
    shared = [k for k in range(n_x, basis.n_b)]
    return StructureMask.from_flow(rows, cols, sorted(flow), shared_rows=shared, n_b=basis.n_b)


def set_path(raw, dotted, value):
    node = raw
    parts = dotted.split(".")
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def bundled_scenarios():
    return sorted(p.stem for p in BUNDLED.glob("*.yaml"))
