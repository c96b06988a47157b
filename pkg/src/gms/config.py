"""Experiment configuration: a sectioned ``key = value`` text file.

Example::

    [schedule]
    kind = linear
    T = 1000

    [data]
    preset = toy1d

    [solver]
    kind = gms
    K = 10
    seeds = 0, 1, 2, 3, 4

Explicit mixtures use ``weights``, ``means`` and ``vars`` in ``[data]``,
one row per component separated by ``;``.  Every key is optional; see
``DEFAULTS`` for the full list.
"""

from __future__ import annotations

import configparser
import difflib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gmmfit import OptimizerConfig
from .mixture import PRESETS, MixtureDistribution, preset
from .samplers import SAMPLER_KINDS, SamplerConfig
from .schedule import NoiseSchedule, make_schedule

DEFAULTS = {
    "schedule": {"kind": "linear", "T": "1000"},
    "data": {"preset": "toy1d", "weights": "", "means": "", "vars": ""},
    "provider": {
        "kind": "oracle", "path": "", "order": "3", "width": "128", "depth": "3", "emb_dim": "32",
        "head_width": "128", "iterations": "5000", "batch_size": "256", "lr": "1e-3", "seed": "0",
    },
    "solver": {
        "kind": "gms", "K": "10", "seeds": "0,1,2,3,4", "batch": "4000", "last_step_noise": "true",
        "clip": "", "fit_method": "gradient",
    },
    "gmm": {"steps": "25", "lr": "0.1", "warmup": "18", "min_lr": "0.01", "schedule": "cosine",
            "init": "closed_form"},
    "eval": {"L": "10000", "metrics": "kde_loglik", "reference_seed": "999", "diagnose_n": "1000"},
    "sdedit": {"t0": "", "K": "10"},
    "sweep": {"K": ""},
    "output": {"dir": "out"},
}

_KNOWN = [f"{sec}.{key}" for sec, keys in DEFAULTS.items() for key in keys]


@dataclass(frozen=True)
class ExperimentConfig:
    schedule_kind: str
    T: int
    data: MixtureDistribution
    data_name: str
    provider_kind: str
    provider_path: str
    provider_order: int
    train: dict
    solver: str
    K: int
    seeds: tuple[int, ...]
    batch: int
    sampler: SamplerConfig
    L: int
    metrics: tuple[str, ...]
    reference_seed: int
    diagnose_n: int
    sdedit_t0: int | None
    sdedit_K: int
    sweep_K: tuple[int, ...]
    out_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def sched(self) -> NoiseSchedule:
        return make_schedule(self.schedule_kind, self.T)


def _suggest(name: str) -> str:
    close = difflib.get_close_matches(name, _KNOWN, n=1, cutoff=0.6)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive (K, T, L)
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}:{lineno}:1: cannot parse line {line.strip()!r}") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", "?")
        raise ConfigError(f"{source}:{line}:1: {exc.message}") from None
    raw = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{sec}]{_suggest(sec + '.' + next(iter(cp[sec]), ''))}",
                              key=sec)
        for key, value in cp[sec].items():
            if key not in DEFAULTS[sec]:
                name = f"{sec}.{key}"
                raise ConfigError(f"{source}: unknown key {name!r}{_suggest(name)}", key=name)
            raw[sec][key] = value.strip()
    return build_config(raw, base_dir=os.path.dirname(source) if os.path.exists(source) else ".")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError:
        raise
    return parse_config_text(text, source=str(path))


def _get(raw, name, conv, check=None, msg=""):
    sec, key = name.split(".")
    value = raw[sec][key]
    try:
        out = conv(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {value!r}", key=name) from None
    if check is not None and not check(out):
        raise ConfigError(f"{name}: {msg} (got {value!r})", key=name)
    return out


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(" ", "").split(",") if v)


def _rows(s: str) -> np.ndarray:
    return np.array([[float(v) for v in row.replace(",", " ").split()] for row in s.split(";") if row.strip()])


def _mixture(raw) -> tuple[MixtureDistribution, str]:
    d = raw["data"]
    if d["weights"] or d["means"] or d["vars"]:
        if not (d["weights"] and d["means"] and d["vars"]):
            raise ConfigError("data: explicit mixtures need weights, means and vars", key="data.weights")
        try:
            w = np.array([float(v) for v in d["weights"].replace(",", " ").split()])
            dist = MixtureDistribution(weights=w, means=_rows(d["means"]), vars=_rows(d["vars"]))
        except ValueError as exc:
            raise ConfigError(f"data: {exc}", key="data.means") from None
        return dist, "explicit"
    name = d["preset"]
    if name not in PRESETS:
        raise ConfigError(f"data.preset: unknown preset {name!r}{_suggest_preset(name)}", key="data.preset")
    return preset(name), name


def _suggest_preset(name):
    close = difflib.get_close_matches(name, list(PRESETS), n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def build_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    T = _get(raw, "schedule.T", int, lambda v: v >= 1, "must be >= 1")
    kind = _get(raw, "schedule.kind", str, lambda v: v in ("linear", "cosine"), "must be linear or cosine")
    data, data_name = _mixture(raw)
    pkind = _get(raw, "provider.kind", str, lambda v: v in ("oracle", "net", "train"),
                 "must be oracle, net or train")
    path = raw["provider"]["path"]
    if pkind == "net":
        if not path:
            raise ConfigError("provider.path: required when provider.kind = net", key="provider.path")
        path = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(path):
            raise ConfigError(f"provider.path: file {path!r} does not exist", key="provider.path")
    order = _get(raw, "provider.order", int, lambda v: v in (1, 2, 3), "must be 1, 2 or 3")
    train = {
        "width": _get(raw, "provider.width", int, lambda v: v >= 1, "must be >= 1"),
        "depth": _get(raw, "provider.depth", int, lambda v: v >= 1, "must be >= 1"),
        "emb_dim": _get(raw, "provider.emb_dim", int, lambda v: v >= 2 and v % 2 == 0, "must be even and >= 2"),
        "head_width": _get(raw, "provider.head_width", int, lambda v: v >= 1, "must be >= 1"),
        "iterations": _get(raw, "provider.iterations", int, lambda v: v >= 0, "must be >= 0"),
        "batch_size": _get(raw, "provider.batch_size", int, lambda v: v >= 1, "must be >= 1"),
        "lr": _get(raw, "provider.lr", float, lambda v: v > 0, "must be > 0"),
        "seed": _get(raw, "provider.seed", int),
    }
    solver = _get(raw, "solver.kind", str, lambda v: v in SAMPLER_KINDS, f"must be one of {SAMPLER_KINDS}")
    K = _get(raw, "solver.K", int, lambda v: 1 <= v <= T, f"must satisfy 1 <= K <= T = {T}")
    seeds = _get(raw, "solver.seeds", _ints, lambda v: len(v) >= 1, "needs at least one seed")
    batch = _get(raw, "solver.batch", int, lambda v: v >= 1, "must be >= 1")
    clip_raw = raw["solver"]["clip"]
    clip = None if clip_raw == "" else _get(raw, "solver.clip", float, lambda v: v > 0, "must be > 0")
    fit = OptimizerConfig(
        steps=_get(raw, "gmm.steps", int, lambda v: v >= 0, "must be >= 0"),
        lr=_get(raw, "gmm.lr", float, lambda v: v > 0, "must be > 0"),
        warmup=_get(raw, "gmm.warmup", int, lambda v: v >= 0, "must be >= 0"),
        min_lr=_get(raw, "gmm.min_lr", float, lambda v: v >= 0, "must be >= 0"),
        schedule=_get(raw, "gmm.schedule", str, lambda v: v in ("cosine", "constant"), "must be cosine or constant"),
        init=_get(raw, "gmm.init", str, lambda v: v in ("closed_form", "gaussian_perturbed"),
                  "must be closed_form or gaussian_perturbed"),
    )
    sampler = SamplerConfig(
        fit=fit,
        fit_method=_get(raw, "solver.fit_method", str, lambda v: v in ("gradient", "closed_form"),
                        "must be gradient or closed_form"),
        last_step_noise=_get(raw, "solver.last_step_noise", _bool),
        clip=clip,
    )
    metrics = tuple(m.strip() for m in raw["eval"]["metrics"].split(",") if m.strip())
    bad = [m for m in metrics if m not in ("kde_loglik", "l2")]
    if bad:
        raise ConfigError(f"eval.metrics: unknown metric {bad[0]!r}", key="eval.metrics")
    t0_raw = raw["sdedit"]["t0"]
    t0 = None if t0_raw == "" else _get(raw, "sdedit.t0", int, lambda v: 1 <= v <= T, f"must lie in [1, {T}]")
    sdK = _get(raw, "sdedit.K", int, lambda v: v >= 1, "must be >= 1")
    if t0 is not None and sdK > t0:
        raise ConfigError(f"sdedit.K: must be <= sdedit.t0 = {t0}", key="sdedit.K")
    sweep = _get(raw, "sweep.K", _ints, lambda v: all(1 <= k <= T for k in v), f"every K must lie in [1, {T}]")
    return ExperimentConfig(
        schedule_kind=kind, T=T, data=data, data_name=data_name, provider_kind=pkind, provider_path=path,
        provider_order=order, train=train, solver=solver, K=K, seeds=seeds, batch=batch, sampler=sampler,
        L=_get(raw, "eval.L", int, lambda v: v >= 2, "must be >= 2"), metrics=metrics,
        reference_seed=_get(raw, "eval.reference_seed", int),
        diagnose_n=_get(raw, "eval.diagnose_n", int, lambda v: v >= 1, "must be >= 1"),
        sdedit_t0=t0, sdedit_K=sdK, sweep_K=sweep, out_dir=raw["output"]["dir"],
        raw={s: dict(v) for s, v in raw.items()},
    )


def default_config(**overrides) -> ExperimentConfig:
    """Defaults with ``section.key`` overrides given as ``section__key=value``."""
    raw = {sec: dict(keys) for sec, keys in DEFAULTS.items()}
    for name, value in overrides.items():
        sec, key = name.split("__")
        if sec not in raw or key not in raw[sec]:
            raise ConfigError(f"unknown key {sec}.{key}{_suggest(sec + '.' + key)}", key=f"{sec}.{key}")
        raw[sec][key] = str(value)
    return build_config(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec, keys in cfg.raw.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
        lines.append("")
    return "\n".join(lines)
