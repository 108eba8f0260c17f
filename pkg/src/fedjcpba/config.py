"""Scenario configuration: YAML in, fully-defaulted validated dataclasses out.

Every key has a default matching the reference wireless setup (8 clients,
100 MHz, 60 dB path loss, 10 W / 0.2 W, 1 TFLOPS baseline, 4-8 GB memory),
so an empty file is a complete scenario. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from fedjcpba import arch
from fedjcpba.errors import ParseError, UnknownKey, ValidationError


@dataclass
class ModelConfig:
    preset: Optional[str] = "gpt2-medium"
    n_layers: Optional[int] = None
    d_model: Optional[int] = None
    n_heads: Optional[int] = None
    d_ff: Optional[int] = None
    vocab_size: Optional[int] = None
    n_positions: Optional[int] = None
    seq_len: int = 256
    bytes_per_param: int = 2
    # inclusive layer ranges; None means "last adapter_n_layers layers"
    emulator_layers: Optional[list] = None
    adapter_layers: Optional[list] = None
    adapter_n_layers: int = 2

    def descriptor(self) -> arch.TransformerDescriptor:
        shape = {}
        if self.preset is not None:
            if self.preset not in arch.PRESETS:
                raise ValidationError("model.preset", f"unknown preset {self.preset!r}")
            shape.update(arch.PRESETS[self.preset])
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "n_positions"):
            value = getattr(self, name)
            if value is not None:
                shape[name] = value
        missing = {"n_layers", "d_model", "n_heads", "d_ff", "vocab_size"} - set(shape)
        if missing:
            raise ValidationError(f"model.{sorted(missing)[0]}",
                                  "required when no preset is given")
        try:
            return arch.TransformerDescriptor(seq_len=self.seq_len,
                                              bytes_per_param=self.bytes_per_param, **shape)
        except ValueError as exc:
            raise ValidationError("model", str(exc)) from None

    def partition(self) -> arch.PartitionSpec:
        n_layers = self.descriptor().n_layers
        if self.emulator_layers is None and self.adapter_layers is None:
            spec = arch.PartitionSpec.suffix(n_layers, self.adapter_n_layers)
        else:
            if self.emulator_layers is None or self.adapter_layers is None:
                raise ValidationError("model.adapter_layers",
                                      "give both emulator_layers and adapter_layers")
            spec = arch.PartitionSpec(tuple(self.emulator_layers), tuple(self.adapter_layers))
        try:
            spec.validate(self.descriptor())
        except ValueError as exc:
            raise ValidationError("model.adapter_layers", str(exc)) from None
        return spec

    def validate(self):
        for key in ("emulator_layers", "adapter_layers"):
            value = getattr(self, key)
            if value is not None and len(value) != 2:
                raise ValidationError(f"model.{key}", "expected [first, last]")
        self.partition()


@dataclass
class LinkConfig:
    server_power_w: float = 10.0
    client_power_w: float = 0.2
    noise_power_w: float = 1e-13
    path_loss_db: float = 60.0
    total_bandwidth_hz: float = 1e8

    def validate(self):
        for key in ("server_power_w", "client_power_w", "noise_power_w", "total_bandwidth_hz"):
            if getattr(self, key) <= 0:
                raise ValidationError(f"link.{key}", "must be positive")
        if self.path_loss_db < 0:
            raise ValidationError("link.path_loss_db", "must be non-negative")


@dataclass
class ConstraintsConfig:
    beta_min: float = 0.05
    beta_max: float = 0.8
    xi: float = 0.1
    phi: float = 0.4
    psi: float = 1.0
    gamma_min: float = 0.6
    memory_overhead: float = 4.0

    def validate(self):
        if not 0.0 <= self.beta_min < 1.0:
            raise ValidationError("constraints.beta_min", "must lie in [0, 1)")
        if not 0.0 <= self.beta_max < 1.0:
            raise ValidationError("constraints.beta_max", "must lie in [0, 1)")
        if self.beta_min > self.beta_max:
            raise ValidationError("constraints.beta_min", "exceeds constraints.beta_max")
        for key in ("xi", "phi", "psi", "gamma_min"):
            if getattr(self, key) <= 0:
                raise ValidationError(f"constraints.{key}", "must be positive")
        if self.memory_overhead < 1:
            raise ValidationError("constraints.memory_overhead", "must be >= 1")


@dataclass
class TrainingConfig:
    m_iterations: int = 20
    batch_size: int = 4

    def validate(self):
        for key in ("m_iterations", "batch_size"):
            if getattr(self, key) < 1:
                raise ValidationError(f"training.{key}", "must be >= 1")


def _check_range(key, value, lower=0.0):
    if len(value) != 2 or not lower < value[0] <= value[1]:
        raise ValidationError(key, f"expected [lo, hi] with {lower} < lo <= hi")


@dataclass
class PopulationConfig:
    n_clients: int = 8
    f0_flops: float = 1e12
    speed_range: list = field(default_factory=lambda: [0.5, 2.0])
    memory_range_gb: list = field(default_factory=lambda: [4.0, 8.0])
    dataset_sizes: Optional[list] = None

    def validate(self):
        if self.n_clients < 1:
            raise ValidationError("population.n_clients", "must be >= 1")
        if self.f0_flops <= 0:
            raise ValidationError("population.f0_flops", "must be positive")
        _check_range("population.speed_range", self.speed_range)
        _check_range("population.memory_range_gb", self.memory_range_gb)
        if self.dataset_sizes is not None:
            if len(self.dataset_sizes) != self.n_clients:
                raise ValidationError("population.dataset_sizes", "need one size per client")
            if any(s <= 0 for s in self.dataset_sizes):
                raise ValidationError("population.dataset_sizes", "sizes must be positive")


@dataclass
class SolverConfig:
    epsilon: float = 1e-4
    max_iters: int = 50

    def validate(self):
        if self.epsilon <= 0:
            raise ValidationError("solver.epsilon", "must be positive")
        if self.max_iters < 1:
            raise ValidationError("solver.max_iters", "must be >= 1")


@dataclass
class SimulationConfig:
    policy: str = "jcpba"
    rounds: int = 50
    seed: int = 0
    ubfp_beta: float = 0.3
    adapter_dim: int = 32
    step_scale: float = 0.01
    initial_loss: float = 3.0
    floor_loss: float = 1.0
    loss_decay: float = 0.05

    def validate(self):
        if self.policy not in ("jcpba", "ubfp"):
            raise ValidationError("simulation.policy", "expected 'jcpba' or 'ubfp'")
        if self.rounds < 0:
            raise ValidationError("simulation.rounds", "must be >= 0")
        if self.seed < 0:
            raise ValidationError("simulation.seed", "must be >= 0")
        if not 0.0 <= self.ubfp_beta < 1.0:
            raise ValidationError("simulation.ubfp_beta", "must lie in [0, 1)")
        if self.adapter_dim < 1:
            raise ValidationError("simulation.adapter_dim", "must be >= 1")
        if self.step_scale < 0:
            raise ValidationError("simulation.step_scale", "must be >= 0")
        if not 0.0 < self.loss_decay < 1.0:
            raise ValidationError("simulation.loss_decay", "must lie in (0, 1)")
        if self.floor_loss > self.initial_loss:
            raise ValidationError("simulation.floor_loss", "exceeds simulation.initial_loss")


@dataclass
class SweepConfig:
    speed_ranges: list = field(default_factory=lambda: [[1.0, 1.5], [0.5, 2.0], [0.2, 2.5]])
    policies: list = field(default_factory=lambda: ["jcpba", "ubfp"])

    def validate(self):
        if len(self.speed_ranges) < 2:
            raise ValidationError("sweep.speed_ranges", "need at least two ranges")
        for i, r in enumerate(self.speed_ranges):
            _check_range(f"sweep.speed_ranges[{i}]", r)
        for p in self.policies:
            if p not in ("jcpba", "ubfp"):
                raise ValidationError("sweep.policies", f"unknown policy {p!r}")


@dataclass
class OracleConfig:
    grid_beta: int = 201
    tolerance: float = 0.01

    def validate(self):
        if self.grid_beta < 1:
            raise ValidationError("oracle.grid_beta", "must be >= 1")


@dataclass
class ScenarioConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    constraints: ConstraintsConfig = field(default_factory=ConstraintsConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)

    def validate(self) -> "ScenarioConfig":
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# --- loading ---------------------------------------------------------------

def _coerce(tp, value, key):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ValidationError(key, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        # PyYAML reads exponent literals without a dot (1e8) as strings
        if isinstance(value, bool):
            raise ValidationError(key, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValidationError(key, f"expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ValidationError(key, f"expected a string, got {value!r}")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ValidationError(key, f"expected a list, got {value!r}")
        return [_coerce_item(v, f"{key}[{i}]") for i, v in enumerate(value)]
    return value


def _coerce_item(value, key):
    if isinstance(value, list):
        return [_coerce_item(v, f"{key}[{i}]") for i, v in enumerate(value)]
    if isinstance(value, bool):
        raise ValidationError(key, f"unexpected boolean {value!r}")
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    raise ValidationError(key, f"unsupported value {value!r}")


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValidationError(path or "<root>", "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise UnknownKey(f"{path}.{key}" if path else str(key))
    kwargs = {}
    for name, value in data.items():
        key = f"{path}.{name}" if path else name
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kwargs[name] = _build(tp, value, key)
        else:
            kwargs[name] = _coerce(tp, value, key)
    return cls(**kwargs)


def from_dict(data) -> ScenarioConfig:
    return _build(ScenarioConfig, data, "").validate()


def loads(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"cannot parse scenario: {exc}") from None
    return from_dict(data)


def load_scenario(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from None
    return loads(text)


def default_scenario() -> ScenarioConfig:
    return ScenarioConfig().validate()
