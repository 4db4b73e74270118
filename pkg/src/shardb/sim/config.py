"""Simulation configuration: dataclasses plus TOML loading with exhaustive
schema validation (unknown keys are errors, not warnings)."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ..errors import ConfigError

SKEWS = ("uniform", "low", "high")
QUERY_SHAPES = ("select", "q2", "q5", "q6", "q19")


@dataclass
class WorkloadSpec:
    tables: int = 8
    rows_per_table: int = 100
    txs_per_round: int = 48
    data_fraction: float = 0.5
    cross_shard_ratio: float = 0.3
    skew: str = "uniform"
    query_mix: dict = field(default_factory=lambda: {
        "select": 0.55, "q6": 0.2, "q19": 0.1, "q2": 0.1, "q5": 0.05})

    def validate(self) -> None:
        if self.tables < 1:
            raise ConfigError("workload.tables must be >= 1")
        if self.rows_per_table < 0:
            raise ConfigError("workload.rows_per_table must be >= 0")
        if not 0 <= self.data_fraction <= 1:
            raise ConfigError("workload.data_fraction must be in [0, 1]")
        if not 0 <= self.cross_shard_ratio <= 1:
            raise ConfigError("workload.cross_shard_ratio must be in [0, 1]")
        if self.skew not in SKEWS:
            raise ConfigError(f"workload.skew must be one of {SKEWS}")
        for shape in self.query_mix:
            if shape not in QUERY_SHAPES:
                raise ConfigError(f"unknown query shape {shape!r} in query_mix")
        total = sum(self.query_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"workload.query_mix fractions sum to {total}, not 1")


@dataclass
class SimConfig:
    seed: int = 7
    shards: int = 4
    nodes_per_shard: int = 4
    byzantine_per_shard: int = 0
    fault_threshold: str = "1/3"
    rounds: int = 60
    block_size: int = 64
    epoch_length: int = 20
    round_ms: int = 100
    link_latency_ms: int = 100
    bandwidth_bytes_per_round: int = 250_000
    notification_drop: float = 0.0
    vso_capacity: int = 4096
    pushdown: bool = True
    bloom: bool = True
    blob_threshold_bytes: int = 1024
    confirmation_depth: int = 1
    balancing: bool = True
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)

    def validate(self) -> None:
        if self.shards < 1:
            raise ConfigError("sim.shards must be >= 1")
        if self.nodes_per_shard < 1:
            raise ConfigError("sim.nodes_per_shard must be >= 1")
        if self.byzantine_per_shard >= self.nodes_per_shard:
            raise ConfigError("sim.byzantine_per_shard must be < nodes_per_shard")
        if self.fault_threshold not in ("1/3", "1/2"):
            raise ConfigError("sim.fault_threshold must be '1/3' or '1/2'")
        if self.rounds < 1:
            raise ConfigError("sim.rounds must be >= 1")
        if self.block_size < 1:
            raise ConfigError("sim.block_size must be >= 1")
        if self.epoch_length < 1:
            raise ConfigError("sim.epoch_length must be >= 1")
        if self.round_ms < 1 or self.link_latency_ms < 0:
            raise ConfigError("sim.round_ms must be >= 1 and latency >= 0")
        if self.bandwidth_bytes_per_round < 1:
            raise ConfigError("sim.bandwidth_bytes_per_round must be >= 1")
        if not 0 <= self.notification_drop < 1:
            raise ConfigError("sim.notification_drop must be in [0, 1)")
        if self.vso_capacity < 1:
            raise ConfigError("sim.vso_capacity must be >= 1")
        if self.confirmation_depth < 1:
            raise ConfigError("sim.confirmation_depth must be >= 1")
        self.workload.validate()

    @property
    def fault_fraction(self) -> Fraction:
        num, den = self.fault_threshold.split("/")
        return Fraction(int(num), int(den))

    @property
    def latency_rounds(self) -> int:
        return -(-self.link_latency_ms // self.round_ms)


def _apply_section(obj, section: dict, prefix: str) -> None:
    known = {f.name for f in fields(obj)} - {"workload"}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}.{key}")
        current = getattr(obj, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{prefix}.{key} must be a boolean")
        elif isinstance(current, int) and not isinstance(value, bool):
            if not isinstance(value, int):
                raise ConfigError(f"{prefix}.{key} must be an integer")
        elif isinstance(current, float):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}.{key} must be a number")
            value = float(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigError(f"{prefix}.{key} must be a string")
        elif isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{prefix}.{key} must be a table")
        setattr(obj, key, value)


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as ex:
        raise ConfigError(f"config parse error: {ex}") from ex
    return config_from_dict(data)


def config_from_dict(data: dict) -> SimConfig:
    cfg = SimConfig()
    for section in data:
        if section not in ("sim", "workload"):
            raise ConfigError(f"unknown config section [{section}]")
    _apply_section(cfg, data.get("sim", {}), "sim")
    _apply_section(cfg.workload, data.get("workload", {}), "workload")
    cfg.validate()
    return cfg
