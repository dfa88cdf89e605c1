"""Experiment configuration: sectioned INI files with JSON-valued entries.

Every key has a default; the resolved configuration is echoed as JSON next to
the outputs and that echo is itself a valid config file.
"""

from __future__ import annotations

import configparser
import copy
import json
import math
from pathlib import Path

from . import gmm, streams
from .flows import GRADIENT_MODES, Schedule, ScheduleFn, TimeGrid
from .likelihood import GaussianLikelihood, LikelihoodGuards
from .nested import OUTER_MODES, NestedConfig
from .problems import Problem, synthetic_problem, toy_problem
from .smc import SCHEMES
from .tftf import ConfigError, TftfConfig

DEFAULTS = {
    "run": {"seed": 0},
    "data": {"kind": "toy", "dim": 16, "n_components": 4, "data_seed": 0,
             "weights": None, "means": None, "variances": None},
    "likelihood": {"y": None, "variance": 0.25},
    "sampler": {
        "K": 2000, "n_steps": 1000, "t_n1": 0.4, "t_n2": 0.8, "delta": 0.0,
        "alpha_family": "c_over_t", "alpha_scale": 1.0, "beta_family": "constant", "beta_scale": 1.0,
        "epsilon1": 1e-6, "epsilon2": 1e-12, "clip_norm": None, "scheme": "systematic", "mode": "exact",
    },
    "toy": {"baselines": ["direct_is", "guided_ode"], "truth_samples": 20000, "w2_samples": 2000},
    "nested": {"M_list": [50, 200, 800], "K": 4, "M_tau": None, "outer": "adaptive", "seeds": 5},
    "ablate": {"alpha_scales": [1.0, 2.0, 4.0, 8.0],
               "intervals": [[0.3, 0.7], [0.3, 0.8], [0.4, 0.7], [0.4, 0.8], [0.5, 0.7], [0.5, 0.8]],
               "K_list": [250, 1000, 4000], "replicates": 5},
    "marginal": {"alpha_scales": [0.0, 1.0, 2.0, 4.0], "particles": 100000, "t_start": 0.4},
}

DATA_KINDS = ("toy", "synthetic", "mixture")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _read_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ConfigError("config", "JSON config must map section names to objects")
        return raw
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError("config", str(exc)) from None
    return {sec: {k: _parse_value(v) for k, v in parser.items(sec)} for sec in parser.sections()}


def resolve(raw: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge user settings over defaults, rejecting unknown sections and keys."""
    cfg = copy.deepcopy(DEFAULTS)
    for source in (raw or {}, overrides or {}):
        for sec, entries in source.items():
            if sec not in cfg:
                raise ConfigError(sec, "unknown section")
            for key, value in entries.items():
                if key not in cfg[sec]:
                    raise ConfigError(f"{sec}.{key}", "unknown key")
                cfg[sec][key] = value
    validate(cfg)
    return cfg


def load(path=None, overrides: dict | None = None) -> dict:
    return resolve(_read_raw(path) if path is not None else None, overrides)


def echo(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def _check(cond, key, message):
    if not cond:
        raise ConfigError(key, message)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive_int(cfg, sec, key):
    v = cfg[sec][key]
    _check(_is_int(v) and v >= 1, f"{sec}.{key}", f"must be a positive integer, got {v!r}")


def validate(cfg: dict):
    seed = cfg["run"]["seed"]
    _check(_is_int(seed) and 0 <= seed <= streams.MAX_SEED, "run.seed", f"must be an integer in [0, 2**64), got {seed!r}")
    _check(cfg["data"]["kind"] in DATA_KINDS, "data.kind", f"expected one of {DATA_KINDS}")
    s = cfg["sampler"]
    for key in ("K", "n_steps"):
        _positive_int(cfg, "sampler", key)
    for key in ("t_n1", "t_n2", "delta", "alpha_scale", "beta_scale", "epsilon1", "epsilon2"):
        _check(_is_num(s[key]), f"sampler.{key}", f"must be a finite number, got {s[key]!r}")
    _check(s["clip_norm"] is None or (_is_num(s["clip_norm"]) and s["clip_norm"] > 0), "sampler.clip_norm",
           "must be null or a positive number")
    _check(s["scheme"] in SCHEMES, "sampler.scheme", f"expected one of {SCHEMES}")
    _check(s["mode"] in GRADIENT_MODES, "sampler.mode", f"expected one of {GRADIENT_MODES}")
    _check(s["alpha_family"] in ScheduleFn.FAMILIES, "sampler.alpha_family", f"expected one of {ScheduleFn.FAMILIES}")
    _check(s["beta_family"] in ScheduleFn.FAMILIES, "sampler.beta_family", f"expected one of {ScheduleFn.FAMILIES}")
    lv = cfg["likelihood"]["variance"]
    _check(_is_num(lv) and lv > 0, "likelihood.variance", f"must be a positive number, got {lv!r}")
    t = cfg["toy"]
    _check(isinstance(t["baselines"], list) and set(t["baselines"]) <= {"direct_is", "guided_ode"},
           "toy.baselines", "must be a list drawn from ['direct_is', 'guided_ode']")
    for key in ("truth_samples", "w2_samples"):
        _positive_int(cfg, "toy", key)
    n = cfg["nested"]
    m_list = n["M_list"]
    _check(isinstance(m_list, list) and len(m_list) > 0, "nested.M_list", "must be a non-empty list")
    _check(all(_is_int(m) and m >= 1 for m in m_list), "nested.M_list", "entries must be positive integers")
    _check(m_list == sorted(m_list), "nested.M_list", "must be ascending")
    _positive_int(cfg, "nested", "K")
    _positive_int(cfg, "nested", "seeds")
    _check(n["outer"] in OUTER_MODES, "nested.outer", f"expected one of {OUTER_MODES}")
    _check(n["M_tau"] is None or (_is_num(n["M_tau"]) and 0 < n["M_tau"] <= 1), "nested.M_tau",
           "must be null or a fraction of M in (0, 1]")
    a = cfg["ablate"]
    _check(isinstance(a["alpha_scales"], list) and a["alpha_scales"] and all(_is_num(x) and x > 0 for x in a["alpha_scales"]),
           "ablate.alpha_scales", "must be a non-empty list of positive numbers")
    _check(isinstance(a["intervals"], list) and a["intervals"]
           and all(isinstance(iv, list) and len(iv) == 2 and all(_is_num(x) for x in iv) for iv in a["intervals"]),
           "ablate.intervals", "must be a non-empty list of [t_n1, t_n2] pairs")
    _check(isinstance(a["K_list"], list) and a["K_list"] and all(_is_int(k) and k >= 1 for k in a["K_list"])
           and a["K_list"] == sorted(a["K_list"]), "ablate.K_list", "must be an ascending list of positive integers")
    _positive_int(cfg, "ablate", "replicates")
    mg = cfg["marginal"]
    _check(isinstance(mg["alpha_scales"], list) and mg["alpha_scales"] and all(_is_num(x) and x >= 0 for x in mg["alpha_scales"]),
           "marginal.alpha_scales", "must be a non-empty list of numbers >= 0")
    _positive_int(cfg, "marginal", "particles")
    _check(_is_num(mg["t_start"]) and 0 < mg["t_start"] < 1, "marginal.t_start", "must lie in (0, 1)")
    try:
        TimeGrid(s["n_steps"]).index(mg["t_start"])
    except ValueError as exc:
        raise ConfigError("marginal.t_start", str(exc)) from None
    # Building the objects runs the remaining cross-field checks.
    problem(cfg)
    tftf_config(cfg)


def problem(cfg: dict) -> Problem:
    d = cfg["data"]
    lik_cfg = cfg["likelihood"]
    try:
        if d["kind"] == "toy":
            base = toy_problem()
        elif d["kind"] == "synthetic":
            _positive_int(cfg, "data", "dim")
            _check(_is_int(d["n_components"]) and d["n_components"] >= 2, "data.n_components", "must be an integer >= 2")
            base = synthetic_problem(d["dim"], d["n_components"], d["data_seed"])
        else:
            base = Problem(gmm.GaussianMixture(d["weights"], d["means"], d["variances"]),
                           GaussianLikelihood((0.0,), 1.0))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("data", str(exc)) from None
    y = lik_cfg["y"]
    if y is None:
        if d["kind"] == "mixture":
            raise ConfigError("likelihood.y", "required for an explicit mixture")
        y = base.lik.y
    _check(isinstance(y, (list, tuple)) and all(_is_num(c) for c in y), "likelihood.y", "must be a list of numbers")
    _check(len(y) == base.dim, "likelihood.y", f"has {len(y)} coordinates, data dimension is {base.dim}")
    return Problem(base.data, GaussianLikelihood(tuple(float(c) for c in y), float(lik_cfg["variance"])))


def schedule(cfg: dict, alpha_scale=None) -> Schedule:
    s = cfg["sampler"]
    try:
        return Schedule(
            alpha=ScheduleFn(s["alpha_family"], s["alpha_scale"] if alpha_scale is None else alpha_scale),
            beta=ScheduleFn(s["beta_family"], s["beta_scale"]),
        )
    except ValueError as exc:
        raise ConfigError("sampler.alpha_scale", str(exc)) from None


def guards(cfg: dict, dim: int) -> LikelihoodGuards:
    s = cfg["sampler"]
    clip = 10.0 * math.sqrt(dim) if s["clip_norm"] is None else float(s["clip_norm"])
    return LikelihoodGuards(epsilon2=float(s["epsilon2"]), clip_norm=clip)


def tftf_config(cfg: dict, **changes) -> TftfConfig:
    s = cfg["sampler"]
    try:
        grid = TimeGrid(s["n_steps"])
    except ValueError as exc:
        raise ConfigError("sampler.n_steps", str(exc)) from None
    tc = TftfConfig(
        K=s["K"], grid=grid, t_n1=float(s["t_n1"]), t_n2=float(s["t_n2"]), delta=float(s["delta"]),
        sched=schedule(cfg), guards=guards(cfg, problem(cfg).dim), epsilon1=float(s["epsilon1"]),
        scheme=s["scheme"], mode=s["mode"], seed=cfg["run"]["seed"],
    ).with_(**changes)
    try:
        return tc.validate()
    except ConfigError as exc:
        raise ConfigError(f"sampler.{exc.key}", str(exc).split(": ", 1)[-1]) from None


def nested_config(cfg: dict, M: int, seed: int) -> NestedConfig:
    n = cfg["nested"]
    inner = tftf_config(cfg, K=n["K"], seed=seed)
    tau = None if n["M_tau"] is None else n["M_tau"] * M
    nc = NestedConfig(M=M, M_tau=tau, inner=inner, outer=n["outer"])
    try:
        return nc.validate()
    except ConfigError as exc:
        raise ConfigError(f"nested.{exc.key}", str(exc).split(": ", 1)[-1]) from None
