"""Experiment configuration: a YAML file with nested sections, strictly checked.

Unknown keys are errors, reported with their dotted path and line number.
``learner.forward`` / ``learner.backward`` hold per-direction overrides.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np
import yaml

from .dynamics import BENCHMARKS, benchmark_defaults, make_benchmark
from .learner import LearnerConfig
from .sim import IntegratorConfig


class ConfigError(ValueError):
    pass


_LEARNER_KEYS = {f.name for f in fields(LearnerConfig)}
_INTEGRATOR_KEYS = {f.name for f in fields(IntegratorConfig)}
_TOP_KEYS = {"benchmark", "learner", "integrator", "composer", "oracle", "seed", "output_dir"}
_COMPOSER_KEYS = {"mode", "epsilon_list"}
_ORACLE_KEYS = {"tol", "max_iter", "segments"}


@dataclass
class ExperimentConfig:
    benchmark: str
    params: dict = field(default_factory=dict)
    learner: dict = field(default_factory=dict)
    learner_forward: dict = field(default_factory=dict)
    learner_backward: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    mode: str = "overlay"
    epsilon_list: list = field(default_factory=lambda: [0.5, 0.1, 0.05])
    oracle: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "runs"

    def problem(self):
        return make_benchmark(self.benchmark, self.params)

    def learner_config(self, direction: str) -> LearnerConfig:
        over = self.learner_forward if direction == "forward" else self.learner_backward
        return LearnerConfig(**{**self.learner, **over})

    def integrator_config(self) -> IntegratorConfig:
        return IntegratorConfig(**self.integrator)

    def phase_seeds(self) -> dict:
        """Per-phase seeds derived from the master seed."""
        children = np.random.SeedSequence(self.seed).spawn(3)
        names = ("train_forward", "train_backward", "heldout")
        return {k: int(c.generate_state(1, dtype=np.uint64)[0]) for k, c in zip(names, children)}

    def as_dict(self) -> dict:
        learner = dict(self.learner)
        if self.learner_forward:
            learner["forward"] = dict(self.learner_forward)
        if self.learner_backward:
            learner["backward"] = dict(self.learner_backward)
        return {
            "benchmark": {"name": self.benchmark, "params": dict(self.params)},
            "learner": learner,
            "integrator": dict(self.integrator),
            "composer": {"mode": self.mode, "epsilon_list": list(self.epsilon_list)},
            "oracle": dict(self.oracle),
            "seed": int(self.seed),
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        d = self.as_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _to_python(node, path, lines):
    """Build plain Python data from a YAML node, recording line numbers by path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k))
            if key in out:
                raise ConfigError(f"line {k.start_mark.line + 1}: duplicate key {path}{key}")
            out[key] = _to_python(v, f"{path}{key}.", lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}{i}.", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _check_keys(section: dict, allowed, path, lines):
    if not isinstance(section, dict):
        raise ConfigError(f"line {lines.get(path, '?')}: {path.rstrip('.') or 'config'} "
                          f"must be a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"line {lines.get(f'{path}{key}.', '?')}: unknown field "
                              f"'{path}{key}' (allowed: {', '.join(sorted(allowed))})")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML error: {exc}") from exc
    if root is None:
        raise ConfigError(f"{source}: empty config")
    lines = {}
    data = _to_python(root, "", lines)
    _check_keys(data, _TOP_KEYS, "", lines)
    if "benchmark" not in data:
        raise ConfigError(f"{source}: missing required section 'benchmark'")

    bench = data["benchmark"]
    if isinstance(bench, str):
        bench = {"name": bench}
    _check_keys(bench, {"name", "params"}, "benchmark.", lines)
    name = bench.get("name")
    if name not in BENCHMARKS:
        raise ConfigError(f"line {lines.get('benchmark.', '?')}: unknown benchmark "
                          f"{name!r}; choose from {', '.join(BENCHMARKS)}")
    params = bench.get("params") or {}
    _check_keys(params, set(benchmark_defaults(name)), "benchmark.params.", lines)

    learner = dict(data.get("learner") or {})
    fwd = learner.pop("forward", None) or {}
    bwd = learner.pop("backward", None) or {}
    _check_keys(learner, _LEARNER_KEYS, "learner.", lines)
    _check_keys(fwd, _LEARNER_KEYS, "learner.forward.", lines)
    _check_keys(bwd, _LEARNER_KEYS, "learner.backward.", lines)

    integ = data.get("integrator") or {}
    _check_keys(integ, _INTEGRATOR_KEYS, "integrator.", lines)
    comp = data.get("composer") or {}
    _check_keys(comp, _COMPOSER_KEYS, "composer.", lines)
    orc = data.get("oracle") or {}
    _check_keys(orc, _ORACLE_KEYS, "oracle.", lines)

    cfg = ExperimentConfig(benchmark=name, params=params, learner=learner,
                           learner_forward=fwd, learner_backward=bwd, integrator=integ,
                           oracle=orc, seed=data.get("seed", 0),
                           output_dir=str(data.get("output_dir", f"runs/{name}")))
    if "mode" in comp:
        cfg.mode = comp["mode"]
    if "epsilon_list" in comp:
        cfg.epsilon_list = comp["epsilon_list"]
    validate(cfg, lines)
    return cfg


def validate(cfg: ExperimentConfig, lines: Optional[dict] = None):
    lines = lines or {}

    def where(path):
        return f"line {lines.get(path, '?')}: "

    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError(f"{where('seed.')}seed must be an unsigned 64-bit integer")
    if cfg.mode not in ("overlay", "additive"):
        raise ConfigError(f"{where('composer.mode.')}composer.mode must be overlay or additive")
    eps = cfg.epsilon_list
    if not isinstance(eps, list) or not eps:
        raise ConfigError(f"{where('composer.epsilon_list.')}composer.epsilon_list must be "
                          f"a non-empty list")
    for e in eps:
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not 0 < e <= 1:
            raise ConfigError(f"{where('composer.epsilon_list.')}epsilon {e!r} not in (0, 1]")
    try:
        cfg.problem()
        for d in ("forward", "backward"):
            cfg.learner_config(d)
        cfg.integrator_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def default_config_text(benchmark: str) -> str:
    if benchmark not in BENCHMARKS:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    return resources.files("boundary_rl").joinpath("configs", f"{benchmark}.yaml").read_text()


def default_config(benchmark: str) -> ExperimentConfig:
    return parse_config(default_config_text(benchmark), f"{benchmark}.yaml")
