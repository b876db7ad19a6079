"""Experiment configuration: YAML parsing, validation, defaults and hashing.

Accepted top-level keys are listed in ``TOP_KEYS``. Model and profile
fields may be written flat at the top level or nested under ``model:`` and
``profile:``::

    model: ou-drift
    theta_star: 1.0
    schedule: [50, 100, 200, 400]
    reps: 2000
    seed: 1
    probes:
      - identifiability
      - moment_convergence: {f_family: [u2], estimators: [M]}

Every default is written into the resolved form, and ``config_hash`` is the
SHA-256 of its canonical JSON with the execution-only keys ``threads`` and
``out_dir`` and the master ``seed`` left out.
"""
from dataclasses import dataclass
import hashlib
import json
import math
import os

import numpy as np
import yaml

from .core import ScalingSchedule, linear_prior, truncated_normal_prior, uniform_prior
from .errors import ConfigError, ModelError, ProfileError
from .estimators import OptimizerSettings, QuadratureSettings
from .models import DEFAULT_EXTRAS, KINDS, ModelSpec
from .verification.probes import F_FAMILY, MIN_REPS, PROBES
from .verification.profile import MODES, ConditionProfile, find_rho1

MODEL_KEYS = ("kind", "theta_star", "mesh", "lower", "upper", "extras")
PROFILE_KEYS = ("alpha", "beta1", "beta2", "rho1", "rho2", "L", "mode")
TOP_KEYS = ("model", "schedule", "scaling", "profile", "prior", "probes", "reps", "seed", "threads", "out_dir",
            "optimizer", "quadrature", "strict") + MODEL_KEYS[1:] + PROFILE_KEYS
EXEC_KEYS = ("threads", "out_dir")
DEFAULT_OUT_ENV = "QLA_OUT_DIR"

PROFILE_DEFAULTS = {"alpha": 0.2, "beta1": 0.3, "beta2": 0.05, "rho1": None, "rho2": 0.5, "L": 2.0, "mode": "S"}

PROBE_DEFAULTS = {
    "pld_tail": {"r_grid": [2.0, 3.0, 4.0, 5.0, 6.0]},
    "identifiability": {"grid_size": 10_000},
    "condition_norm": {"deltas": [0.2, 0.1, 0.05], "grid_points": 512},
    "gamma_uniform_consistency": {"K": 2.0, "threshold": 0.05, "grid_points": 512},
    "efficiency_residual": {"threshold": 0.05},
    "mle_bayes_gap": {"threshold": 0.05},
    "moment_convergence": {"f_family": ["u", "u2", "abs3"], "estimators": ["M", "B"], "limit_draws": 100_000},
    "studentized_normality": {"threshold": 0.05},
    "qbe_integrability": {"q": None, "delta": None},
}


@dataclass(frozen=True)
class ExperimentConfig:
    resolved: dict
    config_hash: str
    threads: object = 1
    out_dir: str = None
    source: str = None

    @property
    def seed(self):
        return self.resolved["seed"]

    @property
    def reps(self):
        return self.resolved["reps"]

    @property
    def strict(self):
        return self.resolved["strict"]

    def model(self):
        m = self.resolved["model"]
        return ModelSpec(m["kind"], theta_star=m["theta_star"], horizon=self.resolved["schedule"]["times"][0],
                         mesh=m["mesh"], extras=dict(m["extras"]), lower=m["lower"], upper=m["upper"])

    def schedule(self):
        s = self.resolved["schedule"]
        return ScalingSchedule(s["times"], q=np.array(s["q"], dtype=float))

    def profile(self):
        return ConditionProfile(**self.resolved["profile"])

    def prior(self):
        p = self.resolved["prior"]
        space = self.model().space
        if p["name"] == "uniform":
            return uniform_prior(space)
        if p["name"] == "linear":
            return linear_prior(space, p["slope"])
        return truncated_normal_prior(space, p["mean"], p["sd"])

    def optimizer(self):
        return OptimizerSettings(**self.resolved["optimizer"])

    def quadrature(self):
        return QuadratureSettings(**self.resolved["quadrature"])

    def probe_names(self):
        return [p["name"] for p in self.resolved["probes"]]

    def probe_settings(self, name):
        for p in self.resolved["probes"]:
            if p["name"] == name:
                return {k: v for k, v in p.items() if k != "name"}
        return self.default_probe_settings(name)

    def default_probe_settings(self, name):
        if name not in PROBES:
            raise ConfigError(f"unknown probe {name!r}; available: {sorted(PROBES)}", key="probes")
        return _resolve_probe(name, {}, self.resolved, _Lines({}), "probes")

    def to_json(self):
        return canonical_json(self.resolved)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(resolved):
    body = {k: v for k, v in resolved.items() if k not in EXEC_KEYS + ("seed",)}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


class _Lines:
    """Map from dotted key paths to 1-based source lines."""

    def __init__(self, table):
        self.table = table

    def __call__(self, key):
        while key:
            if key in self.table:
                return self.table[key]
            key = key.rpartition(".")[0]
        return None

    def err(self, msg, key):
        return ConfigError(msg, key=key, line=self(key))


def _index_lines(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out.setdefault(path, k.start_mark.line + 1)
            _index_lines(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out.setdefault(path, v.start_mark.line + 1)
            _index_lines(v, path, out)
    return out


def load_yaml(text):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    return data, _Lines(_index_lines(node) if node is not None else {})


def parse_config(path, overrides=None):
    """Read, validate and resolve a config file; ``overrides`` replace top-level keys after parsing."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    return parse_config_text(text, overrides, source=path)


def parse_config_text(text, overrides=None, source=None):
    data, lines = load_yaml(text)
    for k in data:
        if k not in TOP_KEYS:
            raise lines.err(f"unknown key {k!r}; allowed: {', '.join(sorted(TOP_KEYS))}", str(k))
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    resolved = resolve(data, lines)
    threads = data.get("threads", 1)
    if not (threads == "auto" or (isinstance(threads, int) and not isinstance(threads, bool) and threads >= 1)):
        raise lines.err("threads must be a positive integer or 'auto'", "threads")
    out_dir = data.get("out_dir") or os.environ.get(DEFAULT_OUT_ENV) or "qla-out"
    return ExperimentConfig(resolved, config_hash(resolved), threads, str(out_dir), source)


def _num(v, key, lines, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise lines.err(f"expected a number, got {v!r}", key)
    if not math.isfinite(v):
        raise lines.err("value must be finite", key)
    if integer and float(v) != int(v):
        raise lines.err(f"expected an integer, got {v!r}", key)
    if positive and v <= 0:
        raise lines.err("value must be positive", key)
    return int(v) if integer else float(v)


def _group(data, name, keys, lines):
    """Merge a nested mapping with flat top-level keys of the same group."""
    nested = data.get(name)
    if isinstance(nested, dict):
        out = dict(nested)
        for k in out:
            if k not in keys:
                raise lines.err(f"unknown key {k!r} under {name}; allowed: {', '.join(keys)}", f"{name}.{k}")
    else:
        out = {}
    for k in keys:
        if k in data and k != name:
            if k in out:
                raise lines.err(f"{k!r} given both at top level and under {name}", k)
            out[k] = data[k]
    return out


def resolve(data, lines=None):
    lines = lines or _Lines({})
    res = {}

    # model
    if "model" not in data:
        raise lines.err("missing required key", "model")
    m = _group(data, "model", MODEL_KEYS, lines)
    if isinstance(data["model"], str):
        m["kind"] = data["model"]
    kind = m.get("kind")
    if kind not in KINDS:
        raise lines.err(f"model kind must be one of {KINDS}, got {kind!r}", "model")
    extras = m.get("extras") or {}
    if not isinstance(extras, dict):
        raise lines.err("extras must be a mapping", "extras")
    for k in extras:
        if k not in DEFAULT_EXTRAS[kind]:
            raise lines.err(f"unknown extra {k!r} for {kind}", f"extras.{k}")
        _num(extras[k], f"extras.{k}", lines)
    for k in ("theta_star", "mesh", "lower", "upper"):
        if m.get(k) is not None:
            m[k] = _num(m[k], k, lines, positive=(k == "mesh"))

    # schedule
    sched = data.get("schedule")
    if sched is None:
        raise lines.err("missing required key", "schedule")
    if isinstance(sched, dict):
        times, q = sched.get("times"), sched.get("q", data.get("scaling"))
        extra = set(sched) - {"times", "q"}
        if extra:
            raise lines.err(f"unknown schedule keys {sorted(extra)}", "schedule")
    else:
        times, q = sched, data.get("scaling")
    if not isinstance(times, list) or len(times) < 2:
        raise lines.err("schedule needs at least two T values", "schedule")
    times = [_num(t, f"schedule[{i}]", lines, positive=True) for i, t in enumerate(times)]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise lines.err("schedule must be strictly increasing", "schedule")
    q = [[1.0]] if q is None else q
    q = [[_num(x, "scaling", lines) for x in row] for row in (q if isinstance(q[0], list) else [q])] \
        if isinstance(q, list) else [[_num(q, "scaling", lines)]]
    try:
        spec = ModelSpec(kind, theta_star=m.get("theta_star"), horizon=times[0], mesh=m.get("mesh"),
                         extras=extras, lower=m.get("lower"), upper=m.get("upper"))
        for t in times:
            spec.with_horizon(t)
        ScalingSchedule(times, q=np.array(q), dim=spec.dim)
    except (ModelError, ValueError) as exc:
        raise lines.err(str(exc), "model" if isinstance(exc, ModelError) else "schedule") from None
    res["model"] = {"kind": kind, "theta_star": spec.theta_star, "mesh": spec.mesh, "lower": spec.lower,
                    "upper": spec.upper, "extras": {k: float(v) for k, v in spec.extras.items()}}
    res["schedule"] = {"times": times, "q": q, "rule": "a_T = T^(-1/2) q"}

    # profile
    p = {**PROFILE_DEFAULTS, **_group(data, "profile", PROFILE_KEYS, lines)}
    if p["mode"] not in MODES:
        raise lines.err(f"mode must be one of {MODES}", "mode")
    for k in PROFILE_KEYS[:-1]:
        if p[k] is not None:
            p[k] = _num(p[k], k if k in data else f"profile.{k}", lines)
    culprit = _profile_culprit(p)
    if culprit:
        k, text = culprit
        raise lines.err(f"condition profile violates {text}", k if k in data else f"profile.{k}")
    try:
        if p["rho1"] is None:
            p["rho1"] = find_rho1(p["alpha"], p["beta1"], p["beta2"], p["rho2"], p["L"])
        ConditionProfile(**p)
    except ProfileError as exc:
        raise lines.err(str(exc), "rho1" if "rho1" in data else "profile") from None
    res["profile"] = p

    # prior
    res["prior"] = _resolve_prior(data.get("prior", "uniform"), spec, lines)

    # scalars
    res["reps"] = _num(data.get("reps", 2000), "reps", lines, integer=True)
    if res["reps"] < 100:
        raise lines.err("reps must be >= 100", "reps")
    seed = _num(data.get("seed", 0), "seed", lines, integer=True)
    if not 0 <= seed < 2**64:
        raise lines.err("seed must be a 64-bit unsigned integer", "seed")
    res["seed"] = seed
    strict = data.get("strict", False)
    if not isinstance(strict, bool):
        raise lines.err("strict must be true or false", "strict")
    res["strict"] = strict
    res["optimizer"] = _settings(data.get("optimizer"), OptimizerSettings, "optimizer", lines)
    res["quadrature"] = _settings(data.get("quadrature"), QuadratureSettings, "quadrature", lines)

    # probes
    probes = data.get("probes")
    if probes is None:
        probes = [n for n in PROBES if not (n == "identifiability" and kind == "synthetic-laq")]
    if not isinstance(probes, list):
        raise lines.err("probes must be a list", "probes")
    out, seen = [], set()
    for i, item in enumerate(probes):
        key = f"probes[{i}]"
        if isinstance(item, str):
            name, settings = item, {}
        elif isinstance(item, dict) and len(item) == 1:
            name, settings = next(iter(item.items()))
            settings = settings or {}
            if not isinstance(settings, dict):
                raise lines.err("probe settings must be a mapping", key)
        else:
            raise lines.err("each probe is a name or a one-entry mapping {name: settings}", key)
        if name not in PROBES:
            raise lines.err(f"unknown probe {name!r}; available: {', '.join(PROBES)}", key)
        if name in seen:
            raise lines.err(f"probe {name!r} listed twice", key)
        seen.add(name)
        out.append({"name": name, **_resolve_probe(name, settings, res, lines, key)})
    res["probes"] = out
    return res


def _profile_culprit(p):
    """First violated inequality among the user-set exponents, as ``(key, text)``."""
    a, b1, b2, r2, L = p["alpha"], p["beta1"], p["beta2"], p["rho2"], p["L"]
    checks = [
        ("alpha", 0 < a < 1, "0 < alpha < 1"),
        ("L", L > 0, "L > 0"),
        ("beta1", 0 < b1 < 0.5, "0 < beta1 < 1/2"),
        ("beta2", b2 >= 0, "beta2 >= 0"),
        ("rho2", 2 * a < r2, "0 < 2 alpha < rho2"),
        ("rho2", 1 - 2 * b2 - r2 > 0, "1 - 2 beta2 - rho2 > 0"),
    ]
    for key, ok, text in checks:
        if not ok:
            return key, text
    return None


def _resolve_prior(prior, spec, lines):
    if isinstance(prior, str):
        name, args = prior, {}
    elif isinstance(prior, dict) and "name" in prior:
        name, args = prior["name"], {k: v for k, v in prior.items() if k != "name"}
    elif isinstance(prior, dict) and len(prior) == 1:
        name, args = next(iter(prior.items()))
        args = args or {}
    else:
        raise lines.err("prior must be a name or a mapping", "prior")
    wanted = {"uniform": (), "linear": ("slope",), "truncated-normal": ("mean", "sd")}
    if name not in wanted:
        raise lines.err(f"prior must be one of {sorted(wanted)}, got {name!r}", "prior")
    if set(args) != set(wanted[name]):
        raise lines.err(f"prior {name} takes exactly {list(wanted[name])}", "prior")
    out = {"name": name, **{k: _num(v, f"prior.{k}", lines) for k, v in args.items()}}
    try:
        space = spec.space
        if name == "linear":
            linear_prior(space, out["slope"])
        elif name == "truncated-normal":
            truncated_normal_prior(space, out["mean"], out["sd"])
    except ValueError as exc:
        raise lines.err(str(exc), "prior") from None
    return out


def _settings(given, cls, key, lines):
    defaults = cls().__dict__.copy()
    given = given or {}
    if not isinstance(given, dict):
        raise lines.err(f"{key} must be a mapping", key)
    for k in given:
        if k not in defaults:
            raise lines.err(f"unknown key {k!r} under {key}; allowed: {', '.join(defaults)}", f"{key}.{k}")
    out = {**defaults, **given}
    try:
        cls(**out)
    except (TypeError, ValueError) as exc:
        raise lines.err(str(exc), key) from None
    return out


def _resolve_probe(name, settings, res, lines, key):
    defaults = dict(PROBE_DEFAULTS[name])
    defaults["reps"] = res["reps"]
    for k in settings:
        if k not in defaults:
            raise lines.err(f"unknown setting {k!r} for probe {name}; allowed: {', '.join(sorted(defaults))}",
                            f"{key}.{name}.{k}" if key.startswith("probes[") else key)
    out = {**defaults, **settings}
    where = f"{key}.{name}"
    if name != "identifiability":
        out["reps"] = _num(out["reps"], where + ".reps", lines, integer=True)
        if out["reps"] < MIN_REPS[name]:
            raise lines.err(f"probe {name} needs reps >= {MIN_REPS[name]}, got {out['reps']}",
                            where + ".reps" if "reps" in settings else "reps")
    else:
        out.pop("reps")
        out["grid_size"] = _num(out["grid_size"], where, lines, integer=True)
        if out["grid_size"] < 1000:
            raise lines.err("grid_size must be >= 1000", where)
    if name == "pld_tail":
        r = [_num(x, where, lines) for x in out["r_grid"]]
        if not r or r[0] < 1 or any(b <= a for a, b in zip(r, r[1:])):
            raise lines.err("r_grid must be increasing with minimum >= 1", where)
        out["r_grid"] = r
    elif name == "moment_convergence":
        bad = set(out["f_family"]) - set(F_FAMILY)
        if bad or not out["f_family"]:
            raise lines.err(f"f_family entries must come from {sorted(F_FAMILY)}", where)
        if not out["estimators"] or set(out["estimators"]) - {"M", "B"}:
            raise lines.err("estimators must be a non-empty subset of [M, B]", where)
        out["limit_draws"] = _num(out["limit_draws"], where, lines, integer=True, positive=True)
    elif name == "qbe_integrability":
        m, s = res["model"], res["schedule"]
        dim = 1
        q = out["q"] if out["q"] is not None else float(max(2, dim + 1))
        q = _num(q, where + ".q", lines)
        if q <= dim:
            raise lines.err(f"q must exceed the dimension {dim}", where + ".q")
        r0 = 0.5 * min(m["theta_star"] - m["lower"], m["upper"] - m["theta_star"])
        a0 = np.linalg.norm(np.array(s["q"]), 2) / math.sqrt(s["times"][0])
        limit = r0 / a0
        d = out["delta"] if out["delta"] is not None else min(0.5, limit)
        d = _num(d, where + ".delta", lines, positive=True)
        if d > limit:
            raise lines.err(f"delta must be <= r0/|a_T| = {limit:.6g} at the smallest T", where + ".delta")
        out["q"], out["delta"] = q, d
    elif name == "gamma_uniform_consistency":
        out["K"] = _num(out["K"], where, lines, positive=True)
    elif name == "condition_norm":
        out["deltas"] = [_num(x, where, lines, positive=True) for x in out["deltas"]]
    return out
