"""Experiment configuration (TOML, with JSON sub-trees for degradation ops).

Example::

    version = 1
    seed = 0
    out_dir = "runs/desk"

    [phantom]
    image_size = 64

    [dataset]
    n_samples = 1000
    degradation_source = '{"gauss": {"mean": 0.0, "std": 0.05}}'
    degradation_target = '{"gauss": {"mean": 0.0, "std": 0.05}}'

    [train]
    total_iters = 2000

    [train.pix2pix]      # per-mode overrides
    lambda_l1 = 1.0

    [metrics]
    embedding = "pixels16"

    [observer]
    tasks = "tasks.json"

Unknown keys anywhere are rejected. The top-level ``seed`` seeds the phantom
and training unless those sections set their own.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import degradation as deg
from .gan.networks import NetConfig
from .gan.training import MODES, TrainConfig
from .observer import DEFAULT_TASKS, DetectionTask, load_tasks
from .phantom import PhantomConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    out_dir: Path
    seed: int = 0
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    n_samples: int = 1000
    deg_source: deg.DegradationOp = field(default_factory=lambda: deg.AdditiveGaussian(0.0, 0.05))
    deg_target: deg.DegradationOp = field(default_factory=lambda: deg.AdditiveGaussian(0.0, 0.05))
    export_png: bool = False
    net: NetConfig = field(default_factory=NetConfig)
    train: dict = field(default_factory=dict)  # mode -> TrainConfig
    embedding: str = "pixels16"
    data_range: float = 1.0
    tasks: tuple = DEFAULT_TASKS

    @property
    def dataset_dir(self) -> Path:
        return self.out_dir / "dataset"

    def mode_dir(self, mode: str) -> Path:
        return self.out_dir / mode

    def train_config(self, mode: str) -> TrainConfig:
        return self.train[mode]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Re-seed everything that inherited the global seed."""
        return replace(self, seed=seed, phantom=replace(self.phantom, seed=seed),
                       train={m: replace(c, seed=seed) for m, c in self.train.items()})


_TOP = {"version", "seed", "out_dir", "phantom", "dataset", "net", "train", "metrics", "observer"}
_DATASET = {"n_samples", "degradation_source", "degradation_target", "export_png"}
_METRICS = {"embedding", "data_range"}
_OBSERVER = {"tasks"}


def _reject_unknown(section: str, d: dict, allowed: set) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"[{section}] must be a table")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def parse_op(value, where: str) -> deg.DegradationOp:
    try:
        tree = json.loads(value) if isinstance(value, str) else value
        return deg.from_tree(tree)
    except (json.JSONDecodeError, deg.DegradationError) as exc:
        raise ConfigError(f"{where}: invalid degradation operator: {exc}") from exc


def from_dict(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    _reject_unknown("top level", raw, _TOP)
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        out_dir = base_dir / raw.get("out_dir", "runs/default")

        phantom = PhantomConfig.from_dict({"seed": seed, **raw.get("phantom", {})})

        ds = raw.get("dataset", {})
        _reject_unknown("dataset", ds, _DATASET)
        n = ds.get("n_samples", 1000)
        if not isinstance(n, int) or n < 10:
            raise ConfigError("dataset.n_samples must be an integer >= 10")
        deg_src = parse_op(ds.get("degradation_source", {"gauss": {"mean": 0.0, "std": 0.05}}),
                           "dataset.degradation_source")
        deg_tgt = parse_op(ds.get("degradation_target", {"gauss": {"mean": 0.0, "std": 0.05}}),
                           "dataset.degradation_target")

        net = NetConfig.from_dict(raw.get("net", {}))

        tr = dict(raw.get("train", {}))
        per_mode = {m: tr.pop(m, {}) for m in MODES}
        if "mode" in tr or any("mode" in v for v in per_mode.values()):
            raise ConfigError("[train] must not set 'mode'; use [train.pix2pix] / [train.ambient] tables")
        train = {}
        for mode in MODES:
            merged = {"seed": seed, "target_degradation": deg_tgt, **tr, **per_mode[mode], "mode": mode}
            if "target_degradation" in tr or "target_degradation" in per_mode[mode]:
                merged["target_degradation"] = parse_op(merged["target_degradation"],
                                                        f"train.{mode}.target_degradation")
            train[mode] = TrainConfig.from_dict(merged)

        met = raw.get("metrics", {})
        _reject_unknown("metrics", met, _METRICS)
        embedding = met.get("embedding", "pixels16")
        from .metrics import EMBEDDINGS

        if embedding not in EMBEDDINGS:
            raise ConfigError(f"metrics.embedding must be one of {sorted(EMBEDDINGS)}")
        data_range = float(met.get("data_range", 1.0))
        if not data_range > 0:
            raise ConfigError("metrics.data_range must be > 0")

        obs = raw.get("observer", {})
        _reject_unknown("observer", obs, _OBSERVER)
        tasks = obs.get("tasks")
        if tasks is None:
            tasks = DEFAULT_TASKS
        elif isinstance(tasks, str):
            tasks = tuple(load_tasks(base_dir / tasks))
        else:
            tasks = tuple(DetectionTask.from_dict(t) for t in tasks)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(out_dir=out_dir, seed=seed, phantom=phantom, n_samples=n,
                            deg_source=deg_src, deg_target=deg_tgt,
                            export_png=bool(ds.get("export_png", False)), net=net, train=train,
                            embedding=embedding, data_range=data_range, tasks=tasks)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw, base_dir=path.parent)
