"""Experiment configuration: YAML schema, presets and model construction.

A config file is a YAML mapping with the sections below (every key
optional unless marked)::

    name: ising-144
    output_dir: runs/ising-144      # relative paths resolve against $RDLEARN_OUTPUT_ROOT
    seed: 0                         # master seed
    n_seeds: 5                      # training seeds are seed, seed+1, ...
    objectives: [fwdkld, revkld, sumkld, rd]
    model:                          # required
      kind: ising2d | sk | mis | maxcut
      beta: 0.5
      # ising2d: side, coupling, periodic
      # sk:      n                 (couplings drawn from the instance stream)
      # mis:     n, degree, penalty
      # maxcut:  gset_path
      per_seed_instance: false      # sk/mis: a fresh instance and dataset per seed
    data:
      source: tempering | exact     # exact enumeration only for Nx <= 20
      n_replicas: 4
      beta_min: 0.25
      beta_max: null                # defaults to model.beta
      total_mcs: 1000000
      swap_interval_mcs: 1
      record_interval_mcs: 10
      burn_in_records: 10000
      train_size: 16384
      val_size: 1024
    train:
      epochs: 1000
      minibatch: 128
      eval_interval: 10
      k_gibbs: 1
      n_hidden: null                # defaults to Nx
      lr: 0.001
      adam_beta1: 0.9
      adam_beta2: 0.999
      adam_eps: 1.0e-8
      init_scale: 0.01
      reset_chains: false
      checkpoint_interval: 0        # 0 = final checkpoint only
    sampling:
      count: 16384
      steps: 100
    evaluation:
      hamming_k: 1000
"""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .rng import stream
from .targets import (
    IsingLattice,
    MisInstance,
    TargetModel,
    load_gset,
    random_regular_graph,
    sample_sk_couplings,
)
from .tempering import PtConfig
from .training import Objective, ObjectiveKind, TrainConfig

OUTPUT_ROOT_ENV = "RDLEARN_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _build(cls, section: dict | None, where: str):
    section = dict(section or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**section)


@dataclass
class ModelSpec:
    kind: str
    beta: float = 1.0
    side: int | None = None
    coupling: float = 1.0
    periodic: bool = True
    n: int | None = None
    degree: int | None = None
    penalty: float = 2.0
    gset_path: str | None = None
    per_seed_instance: bool = False


@dataclass
class DataSpec:
    source: str = "tempering"
    n_replicas: int = 4
    beta_min: float = 0.25
    beta_max: float | None = None
    total_mcs: int = 1_000_000
    swap_interval_mcs: int = 1
    record_interval_mcs: int = 10
    burn_in_records: int = 10_000
    train_size: int = 16_384
    val_size: int = 1_024


@dataclass
class TrainSpec:
    epochs: int = 1000
    minibatch: int = 128
    eval_interval: int = 10
    k_gibbs: int = 1
    n_hidden: int | None = None
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.01
    reset_chains: bool = False
    checkpoint_interval: int = 0


@dataclass
class SamplingSpec:
    count: int = 16_384
    steps: int = 100


@dataclass
class EvaluationSpec:
    hamming_k: int = 1000


@dataclass
class ExperimentConfig:
    model: ModelSpec
    name: str = "experiment"
    output_dir: str = "runs/experiment"
    seed: int = 0
    n_seeds: int = 5
    objectives: list = field(default_factory=lambda: [k.value for k in ObjectiveKind])
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "model" not in d:
            raise ConfigError("config has no 'model' section")
        top = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        cfg = cls(
            model=_build(ModelSpec, d.pop("model"), "model"),
            data=_build(DataSpec, d.pop("data", None), "data"),
            train=_build(TrainSpec, d.pop("train", None), "train"),
            sampling=_build(SamplingSpec, d.pop("sampling", None), "sampling"),
            evaluation=_build(EvaluationSpec, d.pop("evaluation", None), "evaluation"),
            **d,
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.model.kind not in ("ising2d", "sk", "mis", "maxcut"):
            raise ConfigError(f"model.kind must be one of ising2d, sk, mis, maxcut; got {self.model.kind!r}")
        if self.model.kind == "maxcut" and self.model.gset_path and not Path(self.model.gset_path).is_file():
            raise ConfigError(f"model.gset_path {self.model.gset_path!r} does not exist")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        for o in self.objectives:
            try:
                ObjectiveKind.parse(o)
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if len(set(self.objectives)) != len(self.objectives):
            raise ConfigError("objectives must be distinct")
        if self.data.source not in ("tempering", "exact"):
            raise ConfigError(f"data.source must be 'tempering' or 'exact', got {self.data.source!r}")
        if self.train.minibatch > self.data.train_size:
            raise ConfigError(f"train.minibatch {self.train.minibatch} exceeds data.train_size {self.data.train_size}")
        if self.data.source == "tempering":
            try:
                self.pt_config(self.seed).validate()
            except ValueError as e:
                raise ConfigError(f"data: {e}") from None

    # -- derived objects -----------------------------------------------------

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_seeds)]

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        if not p.is_absolute():
            p = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / p
        return p

    def instance_key(self, train_seed: int) -> str:
        return f"s{train_seed}" if self.model.per_seed_instance else "shared"

    def instance_seed(self, key: str) -> int:
        return self.seed if key == "shared" else int(key[1:])

    def pt_config(self, seed: int) -> PtConfig:
        d = self.data
        beta_max = d.beta_max if d.beta_max is not None else self.model.beta
        return PtConfig(d.n_replicas, d.beta_min, beta_max, d.total_mcs, d.swap_interval_mcs,
                        d.record_interval_mcs, d.burn_in_records, d.train_size, d.val_size, seed)

    def train_config(self, objective: str, seed: int, **overrides) -> TrainConfig:
        t = self.train
        base = dict(objective=Objective(ObjectiveKind.parse(objective), t.k_gibbs), epochs=t.epochs,
                    minibatch=t.minibatch, seed=seed, eval_interval=t.eval_interval, n_hidden=t.n_hidden,
                    lr=t.lr, adam_beta1=t.adam_beta1, adam_beta2=t.adam_beta2, adam_eps=t.adam_eps,
                    init_scale=t.init_scale, reset_chains=t.reset_chains,
                    checkpoint_interval=t.checkpoint_interval)
        base.update(overrides)
        return TrainConfig(**base)

    def build_model(self, instance_seed: int | None = None) -> TargetModel:
        """Target model; random instances (SK couplings, MIS graphs) come from the instance stream."""
        m = self.model
        seed = self.seed if instance_seed is None else instance_seed
        rng = stream(seed, "instance", m.kind)
        if m.kind == "ising2d":
            if m.side is None:
                raise ConfigError("model.side is required for ising2d")
            payload = IsingLattice(m.side, m.coupling, m.periodic)
        elif m.kind == "sk":
            if m.n is None:
                raise ConfigError("model.n is required for sk")
            payload = sample_sk_couplings(m.n, rng)
        elif m.kind == "mis":
            if m.n is None or m.degree is None:
                raise ConfigError("model.n and model.degree are required for mis")
            payload = MisInstance(m.n, random_regular_graph(m.n, m.degree, rng), m.penalty)
        else:
            if not m.gset_path:
                raise ConfigError("model.gset_path is required for maxcut")
            payload = load_gset(m.gset_path)
        return TargetModel(payload, m.beta, self.name)


# -- presets ---------------------------------------------------------------

_PAPER_TRAIN = {"epochs": 1000, "minibatch": 128, "eval_interval": 10}
_DESK_DATA = {"total_mcs": 100_000, "burn_in_records": 1_000, "train_size": 4_096, "val_size": 1_024}
_DESK_TRAIN = {"epochs": 200, "minibatch": 128, "eval_interval": 10}
_DESK_SAMPLING = {"count": 4_096, "steps": 100}

# (model section, n_replicas, beta_min) for the exchange-MC settings per target
_PAPER_MODELS = {
    "ising-144": ({"kind": "ising2d", "side": 12, "coupling": 1.0, "beta": 0.5}, 4, 0.25),
    "sk-144": ({"kind": "sk", "n": 144, "beta": 2.0, "per_seed_instance": True}, 8, 0.5),
    "mis-250": ({"kind": "mis", "n": 250, "degree": 20, "penalty": 2.0, "beta": 2.0,
                 "per_seed_instance": True}, 40, 0.1),
    "gset-g1": ({"kind": "maxcut", "beta": 1.0}, 16, 0.25),
    "gset-g6": ({"kind": "maxcut", "beta": 2.0}, 16, 0.25),
    "gset-g14": ({"kind": "maxcut", "beta": 4.0}, 32, 0.25),
    "gset-g18": ({"kind": "maxcut", "beta": 2.5}, 32, 0.25),
}


def _preset(name: str) -> dict:
    desk = name.endswith("-desk")
    base = name[: -len("-desk")] if desk else name
    if base == "ising-16":
        # 4x4 toy lattice, same exchange settings as the 12x12 run
        model, n_rep, bmin = {"kind": "ising2d", "side": 4, "coupling": 1.0, "beta": 0.5}, 4, 0.25
    elif base in _PAPER_MODELS:
        model, n_rep, bmin = _PAPER_MODELS[base]
    else:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    model = copy.deepcopy(model)
    data = {"source": "tempering", "n_replicas": n_rep, "beta_min": bmin, "beta_max": model["beta"]}
    cfg = {"name": name, "output_dir": f"runs/{name}", "seed": 0, "n_seeds": 5, "model": model, "data": data}
    if desk:
        data.update(_DESK_DATA)
        cfg["train"] = dict(_DESK_TRAIN)
        cfg["sampling"] = dict(_DESK_SAMPLING)
        cfg["evaluation"] = {"hamming_k": 1000}
    else:
        cfg["train"] = dict(_PAPER_TRAIN)
        cfg["sampling"] = {"count": 16_384, "steps": 100}
        cfg["evaluation"] = {"hamming_k": 1000}
    return cfg


def preset_names() -> list[str]:
    bases = ["ising-16", *_PAPER_MODELS]
    return sorted([b for b in bases if b != "ising-16"] + [b + "-desk" for b in bases])


def preset_dict(name: str) -> dict:
    return _preset(name)


def _set_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        cur = cur.setdefault(k, {})
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a section")
    cur[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``"train.epochs=5"`` -> ``("train.epochs", 5)``; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path: str | None = None, preset: str | None = None, overrides=()) -> ExperimentConfig:
    """Config from a preset and/or a YAML file (file keys win), then dotted overrides."""
    if path is None and preset is None:
        raise ConfigError("either --config or --preset is required")
    d: dict = preset_dict(preset) if preset else {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path!r} does not exist")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {' '.join(str(e).split())}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path} must contain a YAML mapping")
        d = _merge(d, loaded)
    for key, value in overrides:
        _set_path(d, key, value)
    return ExperimentConfig.from_dict(d)


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out
