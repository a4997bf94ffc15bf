"""Experiment configuration: loading (JSON or TOML) and validation."""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..sketch import KINDS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TASKS = ("robust_scalar", "joint_quantile", "multioutput_ridge")
DATASETS = ("friedman", "heteroscedastic", "multioutput", "csv")
DEFAULT_TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)

# grids used when a hyperparameter is neither fixed nor given a grid
DEFAULT_GRIDS = {
    "bandwidth_factors": [0.1, 0.5, 1.0, 2.0, 10.0],
    "lambdas": [float(v) for v in np.logspace(-6, -1, 7)],
    "loss_params": [0.1, 0.5, 1.0, 2.0],
    "gammas": [0.0, 1.0, 10.0, 100.0],
}


class ConfigError(ValueError):
    pass


@dataclass
class SweepEntry:
    kind: str
    s: int | None = None
    p: float | str | None = None
    m: int | None = None

    @property
    def exact(self):
        return self.kind == "exact"

    def resolve_p(self, n):
        if self.p is None:
            return None
        if isinstance(self.p, str):
            num, _, den = self.p.partition("/")
            if den.strip() != "n":
                raise ConfigError(f"cannot parse p={self.p!r}; use a number or 'c/n'")
            return min(1.0, float(num) / n)
        return float(self.p)

    def label(self):
        return {"kind": self.kind, "s": self.s, "p": self.p, "m": self.m}


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    task: dict
    kernel: dict
    sweep: list
    replicates: int = 1
    seed: int = 0
    split: dict = field(default_factory=lambda: {"test_fraction": 0.3, "seed": 0})
    standardize: dict = field(default_factory=lambda: {"x": True, "y": False})
    hyperparameters: dict = field(default_factory=dict)
    cv: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    output: str | None = None
    threads: int | None = None
    raw: dict = field(default_factory=dict)

    @property
    def task_type(self):
        return self.task["type"]


def _expand_sweep(entries):
    out = []
    for e in entries:
        if not isinstance(e, dict) or "kind" not in e:
            raise ConfigError(f"sweep entry needs a 'kind': {e!r}")
        kind = e["kind"]
        if kind != "exact" and kind not in KINDS:
            raise ConfigError(f"unknown sketch kind {kind!r}")
        sizes = e.get("s")
        if kind == "exact":
            out.append(SweepEntry("exact"))
            continue
        if sizes is None:
            raise ConfigError(f"sweep entry {kind!r} needs a sketch size 's'")
        ps = e.get("p")
        ps = ps if isinstance(ps, list) else [ps]
        for s in (sizes if isinstance(sizes, list) else [sizes]):
            if not isinstance(s, int) or s < 1:
                raise ConfigError(f"invalid sketch size {s!r}")
            for p in ps:
                if kind in ("psr", "psg") and p is None:
                    raise ConfigError(f"{kind} needs 'p'")
                if kind == "accumulation" and not e.get("m"):
                    raise ConfigError("accumulation needs 'm'")
                out.append(SweepEntry(kind, s, p, e.get("m")))
    if not out:
        raise ConfigError("empty sweep")
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        task = dict(raw["task"])
        dataset = dict(raw["dataset"])
        sweep = _expand_sweep(raw["sweep"])
    except KeyError as e:
        raise ConfigError(f"missing config section {e}") from None
    if task.get("type") not in TASKS:
        raise ConfigError(f"task.type must be one of {TASKS}")
    if dataset.get("type") not in DATASETS:
        raise ConfigError(f"dataset.type must be one of {DATASETS}")
    if task["type"] == "robust_scalar":
        task.setdefault("loss", "huber")
        if task["loss"] not in ("huber", "eps_insensitive", "square"):
            raise ConfigError("robust_scalar loss must be huber, eps_insensitive or square")
    if task["type"] == "joint_quantile":
        task["taus"] = list(task.get("taus", DEFAULT_TAUS))
    reps = int(raw.get("replicates", 1))
    if reps < 1:
        raise ConfigError("replicates must be >= 1")
    kernel = dict(raw.get("kernel", {"family": "gaussian"}))
    kernel.setdefault("family", "gaussian")
    cfg = ExperimentConfig(
        name=str(raw.get("name", "experiment")), dataset=dataset, task=task,
        kernel=kernel, sweep=sweep, replicates=reps, seed=int(raw.get("seed", 0)),
        split=dict(raw.get("split", {"test_fraction": 0.3, "seed": 0})),
        standardize=dict(raw.get("standardize", {"x": True, "y": False})),
        hyperparameters=dict(raw.get("hyperparameters", {})),
        cv=dict(raw.get("cv", {})), solver=dict(raw.get("solver", {})),
        output=raw.get("output"), threads=raw.get("threads"), raw=raw)
    tf = cfg.split.get("test_fraction", 0.3)
    if not 0 < tf < 1:
        raise ConfigError("split.test_fraction must lie in (0, 1)")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    base = path.parent
    ds = raw.get("dataset", {})
    if ds.get("type") == "csv":
        for key in ("manifest", "path"):
            if key in ds and not Path(ds[key]).is_absolute():
                ds[key] = str(base / ds[key])
    return parse_config(raw)
