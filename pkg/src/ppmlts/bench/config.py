"""JSON experiment configuration (schema in ``docs/config_schema.md``)."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..dp.accountant import DEFAULT_DELTA
from ..errors import ConfigError, InvalidConfig
from ..federated import EnsembleVariant
from ..nn.model import ARCHITECTURES
from ..nn.train import TrainConfig

EXPERIMENTS = (
    "baseline",
    "arch_bench",
    "dp_sweep",
    "eps_study",
    "fed_ensemble_study",
    "dp_fed_fusion",
    "mpc_runtime",
    "mpc_inference",
)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class DatasetPaths:
    name: str
    train: str
    test: str
    max_train: int | None = None  # optional head subset for desk-scale runs
    max_test: int | None = None


@dataclass
class DpSettings:
    clip_norm: float = 1.0
    noise_multipliers: list[float] = field(default_factory=lambda: [0.1])
    delta: float = DEFAULT_DELTA


@dataclass
class FederatedSettings:
    num_clients: list[int] = field(default_factory=lambda: [2])
    clients_per_round: int | None = None
    rounds: int = 100
    local_epochs: int = 1
    stratified: bool = True
    methods: list[str] = field(default_factory=lambda: ["fedavg", "fedens"])
    schemes: list[str] = field(default_factory=lambda: [v.value for v in EnsembleVariant])


@dataclass
class EpsStudy:
    n: int = 5000
    batch_size: int = 32
    epochs: int = 100
    noise_multiplier: float = 0.5
    delta: float = DEFAULT_DELTA
    n_values: list[int] = field(default_factory=lambda: [1000, 2500, 5000, 10000, 20000])
    batch_sizes: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    epoch_values: list[int] = field(default_factory=lambda: [25, 50, 100, 200, 400])
    noise_multipliers: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.75, 1.0, 1.5, 2.0])


@dataclass
class MpcSettings:
    frac_bits: int = 16
    n_parties: int = 2
    batch: int = 8
    repeats: int = 5
    workloads: list[str] = field(default_factory=lambda: ["inference", "train_step"])
    transport: str = "inprocess"
    max_test_samples: int | None = None
    dealer_seed: int = 0


@dataclass
class ExperimentConfig:
    experiment: str
    datasets: list[DatasetPaths] = field(default_factory=list)
    architecture_id: str = "AlexNet1D"
    architectures: list[str] = field(default_factory=list)  # arch_bench only
    train_config: TrainConfig = field(default_factory=TrainConfig)
    dp_config: DpSettings | None = None
    federated_config: FederatedSettings | None = None
    eps_config: EpsStudy | None = None
    mpc_config: MpcSettings | None = None
    seeds: list[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output_dir: str = "results"
    val_fraction: float = 0.1
    base_dir: str = field(default=".", repr=False)  # resolves relative dataset paths

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.architecture_id not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture_id {self.architecture_id!r}")
        for arch in self.architectures:
            if arch not in ARCHITECTURES:
                raise ConfigError(f"unknown architecture {arch!r}")
        if not 0 < self.val_fraction < 0.5:
            raise ConfigError("val_fraction must lie in (0, 0.5)")
        needs_data = self.experiment != "eps_study"
        if needs_data and not self.datasets:
            raise ConfigError(f"experiment {self.experiment} needs at least one dataset")
        required = {
            "dp_sweep": ("dp_config",),
            "eps_study": ("eps_config",),
            "fed_ensemble_study": ("federated_config",),
            "dp_fed_fusion": ("dp_config", "federated_config"),
        }.get(self.experiment, ())
        for key in required:
            if getattr(self, key) is None:
                raise ConfigError(f"experiment {self.experiment} requires {key}")
        if self.experiment == "arch_bench" and not self.architectures:
            raise ConfigError("arch_bench requires a non-empty architectures list")
        if self.dp_config is not None:
            if not self.dp_config.clip_norm > 0 or not self.dp_config.noise_multipliers:
                raise ConfigError("dp_config needs clip_norm > 0 and at least one noise multiplier")
            if any(not (v >= 0 and math.isfinite(v)) for v in self.dp_config.noise_multipliers):
                raise ConfigError("noise multipliers must be finite and >= 0")
        fed = self.federated_config
        if fed is not None:
            if not fed.num_clients or min(fed.num_clients) < 1:
                raise ConfigError("federated_config.num_clients must list positive ints")
            unknown = set(fed.methods) - {"fedavg", "fedens"}
            if unknown:
                raise ConfigError(f"unknown federated methods {sorted(unknown)}")
            for s in fed.schemes:
                try:
                    EnsembleVariant(s)
                except ValueError:
                    raise ConfigError(f"unknown ensemble scheme {s!r}") from None
        mpc = self.mpc_config
        if mpc is not None and mpc.transport not in ("inprocess", "tcp"):
            raise ConfigError("mpc_config.transport must be 'inprocess' or 'tcp'")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError, InvalidConfig) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


_NESTED = {
    "train_config": TrainConfig,
    "dp_config": DpSettings,
    "federated_config": FederatedSettings,
    "eps_config": EpsStudy,
    "mpc_config": MpcSettings,
}


def config_from_dict(data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    if "experiment" not in data:
        raise ConfigError("config is missing 'experiment'")
    for key, cls in _NESTED.items():
        if data.get(key) is not None:
            data[key] = _build(cls, data[key], key)
    if "datasets" in data:
        if not isinstance(data["datasets"], list):
            raise ConfigError("datasets must be a list")
        data["datasets"] = [_build(DatasetPaths, d, f"datasets[{i}]") for i, d in enumerate(data["datasets"])]
    data.pop("base_dir", None)
    cfg = _build(ExperimentConfig, data, "config")
    cfg.base_dir = str(base_dir)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, base_dir=path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out.pop("base_dir")
    return out
