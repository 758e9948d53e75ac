"""Experiment configuration: JSON file parsing with strict validation.

Unknown keys are rejected and every diagnostic names the offending field
path, so a bad config fails fast with an actionable message. CLI flags
(seed, out dir, sparsity, environment) override file values before
parsing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import nn
from .data import EnvironmentKind
from .federation import FederationConfig
from .sparsify import SparsitySchedule


class ConfigError(ValueError):
    """Invalid configuration; message names the field."""


_MISSING = object()


class _Obj:
    """A JSON object being consumed key by key; leftovers are errors."""

    def __init__(self, raw, path: str):
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected an object")
        self.raw = raw
        self.path = path
        self._seen: set[str] = set()

    def take(self, key: str, default=_MISSING):
        self._seen.add(key)
        if key in self.raw:
            return self.raw[key]
        if default is _MISSING:
            raise ConfigError(f"{self.path}: missing required field '{key}'")
        return default

    def _typed(self, key, types, typename, default):
        value = self.take(key, default)
        if value is default or value is None:
            return value
        if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
            raise ConfigError(f"{self.path}.{key}: expected {typename}")
        if not isinstance(value, types):
            raise ConfigError(f"{self.path}.{key}: expected {typename}, got {value!r}")
        return value

    def int(self, key, default=_MISSING):
        return self._typed(key, int, "an integer", default)

    def float(self, key, default=_MISSING):
        v = self._typed(key, (int, float), "a number", default)
        return float(v) if v is not None and v is not default else v

    def str(self, key, default=_MISSING):
        return self._typed(key, str, "a string", default)

    def list(self, key, default=_MISSING):
        return self._typed(key, list, "a list", default)

    def obj(self, key, default=_MISSING) -> Optional["_Obj"]:
        value = self.take(key, default)
        if value is default or value is None:
            return None
        return _Obj(value, f"{self.path}.{key}")

    def finish(self):
        unknown = set(self.raw) - self._seen
        if unknown:
            raise ConfigError(f"{self.path}: unknown field(s) {sorted(unknown)}")


def _dims_field(obj: _Obj, key: str):
    value = obj.take(key)
    if isinstance(value, list):
        return tuple(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    raise ConfigError(f"{obj.path}.{key}: expected an int or a list of ints")


_LAYER_PARSERS = {
    "dense": lambda o: nn.Dense(o.int("in"), o.int("out")),
    "conv": lambda o: nn.Conv(o.int("in_channels"), o.int("out_channels"), _dims_field(o, "kernel")),
    "instance_norm": lambda o: nn.InstanceNorm(o.int("channels")),
    "max_pool": lambda o: nn.MaxPool(_dims_field(o, "window")),
    "relu": lambda o: nn.Relu(),
    "avg_pool": lambda o: nn.AvgPool(),
}


def _parse_model(section: _Obj) -> nn.ModelSpec:
    preset = section.str("preset", None)
    if preset is not None:
        if preset != "seven_block_cnn":
            raise ConfigError(f"{section.path}.preset: unknown preset {preset!r}")
        shape = tuple(section.list("input_shape", [1, 32, 32, 32]))
        widths = tuple(section.list("widths", [32, 64, 128, 256, 256, 64]))
        loss = section.str("loss", "mse")
        section.finish()
        return nn.seven_block_cnn(shape, widths, loss)
    shape = tuple(section.list("input_shape"))
    loss = section.str("loss", "mse")
    raw_layers = section.list("layers")
    section.finish()
    layers = []
    for i, raw in enumerate(raw_layers):
        obj = _Obj(raw, f"{section.path}.layers[{i}]")
        kind = obj.str("type")
        if kind not in _LAYER_PARSERS:
            raise ConfigError(f"{obj.path}.type: unknown layer type {kind!r}")
        try:
            layers.append(_LAYER_PARSERS[kind](obj))
        except nn.SpecError as err:
            raise ConfigError(f"{obj.path}: {err}") from err
        obj.finish()
    try:
        spec = nn.ModelSpec(shape, tuple(layers), loss)
        nn.param_count(spec)  # trace now so shape errors surface here
    except nn.SpecError as err:
        raise ConfigError(f"{section.path}: {err}") from err
    return spec


@dataclass
class SyntheticData:
    n_train: int
    n_val: int = 0
    n_test: int = 0
    feature_shape: tuple = ()
    label_fn: str = "smooth"
    noise: float = 1.0


@dataclass
class CsvData:
    train: str
    val: Optional[str] = None
    test: Optional[str] = None


@dataclass
class CentralizedSection:
    epochs: int = 100
    lr: float = 1e-5
    batch_size: int = 1
    prune_at: Optional[int] = None
    target_sparsity: float = 0.0


@dataclass
class AttackSection:
    unseen_samples: int = 512


@dataclass
class BenchSection:
    duration_s: float = 60.0
    warmup_s: float = 10.0
    sparsity: float = 0.95
    items: int = 16


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    out_dir: str
    spec: nn.ModelSpec
    data: SyntheticData | CsvData | None
    federation: FederationConfig
    environment: EnvironmentKind
    schedule: Optional[SparsitySchedule]
    centralized: CentralizedSection = field(default_factory=CentralizedSection)
    attack: AttackSection = field(default_factory=AttackSection)
    bench: BenchSection = field(default_factory=BenchSection)


def _parse_schedule(section: Optional[_Obj], default_rounds: int) -> Optional[SparsitySchedule]:
    if section is None:
        return None
    sched = SparsitySchedule(
        initial_sparsity=section.float("initial_sparsity", 0.0),
        final_sparsity=section.float("final_sparsity"),
        total_rounds=section.int("total_rounds", default_rounds),
        start_round=section.int("start_round", 1),
        frequency=section.int("frequency", 1),
        exponent=section.float("exponent", 3.0),
    )
    section.finish()
    return sched


def parse_config(raw: dict, mode: str, path_name: str = "config") -> ExperimentConfig:
    root = _Obj(raw, path_name)
    file_mode = root.str("mode", None)
    if file_mode is not None and file_mode != mode:
        raise ConfigError(f"{root.path}.mode: file says {file_mode!r} but the "
                          f"'{mode}' command was invoked")
    seed = root.int("seed", 0)
    out_dir = root.str("out_dir", "runs")

    spec = _parse_model(root.obj("model"))

    data_cfg: SyntheticData | CsvData | None = None
    data_obj = root.obj("data", None)
    if data_obj is not None:
        synth = data_obj.obj("synthetic", None)
        csv_o = data_obj.obj("csv", None)
        data_obj.finish()
        if (synth is None) == (csv_o is None):
            raise ConfigError(f"{data_obj.path}: give exactly one of 'synthetic' or 'csv'")
        if synth is not None:
            data_cfg = SyntheticData(
                n_train=synth.int("n_train"),
                n_val=synth.int("n_val", 0),
                n_test=synth.int("n_test", 0),
                feature_shape=tuple(synth.list("feature_shape", list(spec.input_shape))),
                label_fn=synth.str("label_fn", "smooth"),
                noise=synth.float("noise", 1.0),
            )
            synth.finish()
        else:
            data_cfg = CsvData(
                train=csv_o.str("train"),
                val=csv_o.str("val", None),
                test=csv_o.str("test", None),
            )
            csv_o.finish()
    elif mode in ("federated", "centralized", "attack"):
        raise ConfigError(f"{root.path}: missing required field 'data'")

    fed_obj = root.obj("federation", None)
    fed_kwargs = dict(seed=seed)
    if fed_obj is not None:
        fed_kwargs.update(
            num_learners=fed_obj.int("num_learners", 8),
            rounds=fed_obj.int("rounds", 40),
            local_epochs=fed_obj.int("local_epochs", 4),
            lr=fed_obj.float("lr", 1e-5),
            batch_size=fed_obj.int("batch_size", 1),
            max_workers=fed_obj.int("max_workers", 1),
        )
        fed_obj.finish()
    elif mode in ("federated", "attack"):
        raise ConfigError(f"{root.path}: missing required field 'federation'")

    try:
        schedule = _parse_schedule(
            root.obj("schedule", None), fed_kwargs.get("rounds", 40)
        )
        federation = FederationConfig(schedule=schedule, **fed_kwargs)
    except (ConfigError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{root.path}.schedule: {err}") from err

    env = EnvironmentKind()
    env_obj = root.obj("environment", None)
    if env_obj is not None:
        try:
            env = EnvironmentKind(
                amount=env_obj.str("amount", "uniform"),
                distribution=env_obj.str("distribution", "iid"),
                skew_factor=env_obj.float("skew_factor", 1.5),
                noniid_chunks=env_obj.int("noniid_chunks", 1),
            )
        except ValueError as err:
            raise ConfigError(f"{env_obj.path}: {err}") from err
        env_obj.finish()

    cent = CentralizedSection()
    cent_obj = root.obj("centralized", None)
    if cent_obj is not None:
        cent = CentralizedSection(
            epochs=cent_obj.int("epochs", 100),
            lr=cent_obj.float("lr", 1e-5),
            batch_size=cent_obj.int("batch_size", 1),
            prune_at=cent_obj.int("prune_at", None),
            target_sparsity=cent_obj.float("target_sparsity", 0.0),
        )
        cent_obj.finish()

    attack = AttackSection()
    attack_obj = root.obj("attack", None)
    if attack_obj is not None:
        attack = AttackSection(unseen_samples=attack_obj.int("unseen_samples", 512))
        attack_obj.finish()

    bench = BenchSection()
    bench_obj = root.obj("bench", None)
    if bench_obj is not None:
        bench = BenchSection(
            duration_s=bench_obj.float("duration_s", 60.0),
            warmup_s=bench_obj.float("warmup_s", 10.0),
            sparsity=bench_obj.float("sparsity", 0.95),
            items=bench_obj.int("items", 16),
        )
        bench_obj.finish()

    root.finish()
    return ExperimentConfig(
        mode=mode,
        seed=seed,
        out_dir=out_dir,
        spec=spec,
        data=data_cfg,
        federation=federation,
        environment=env,
        schedule=schedule,
        centralized=cent,
        attack=attack,
        bench=bench,
    )


def apply_overrides(raw: dict, seed=None, out_dir=None, sparsity=None, env=None) -> dict:
    """Fold CLI flag values into a raw config dict (flags win)."""
    raw = json.loads(json.dumps(raw))  # deep copy
    if seed is not None:
        raw["seed"] = seed
    if out_dir is not None:
        raw["out_dir"] = str(out_dir)
    if sparsity is not None:
        sched = raw.get("schedule") or {}
        sched["final_sparsity"] = sparsity
        raw["schedule"] = sched
        if "centralized" in raw:
            raw["centralized"]["target_sparsity"] = sparsity
        if "bench" in raw:
            raw["bench"]["sparsity"] = sparsity
    if env is not None:
        kind = EnvironmentKind.parse(env)
        section = raw.get("environment") or {}
        section["amount"] = kind.amount
        section["distribution"] = kind.distribution
        raw["environment"] = section
    return raw


def load_config(path, mode: str, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    raw = apply_overrides(raw, **overrides)
    return parse_config(raw, mode, path_name=path.name)
