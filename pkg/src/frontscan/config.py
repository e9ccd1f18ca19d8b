"""Single TOML configuration file; every threshold defaults to the reference value.

Example::

    [data]
    fixture = "chain.ndjson"
    prices = "prices.csv"
    rpc_url = ""
    batch_size = 50
    retries = 3

    [displacement]
    window = 100
    stride = 20
    threshold = 0.95

    [gas_tokens]
    gst2 = ["0x0000000000b3f879cb30fe243b4dfee438691c04"]
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .chain import BASE_TX_GAS, Address
from .exceptions import ConfigError

GST2_ADDRESS = Address("0x0000000000b3f879cb30fe243b4dfee438691c04")
CHI_ADDRESS = Address("0x0000000000004946c0e9f43f4dee607b0ef1fa1c")


@dataclass
class DataConfig:
    fixture: Optional[str] = None
    prices: Optional[str] = None
    rpc_url: Optional[str] = None
    batch_size: int = 50
    retries: int = 3
    timeout: float = 30.0


@dataclass
class DisplacementConfig:
    window: int = 100
    stride: int = 20
    threshold: float = 0.95
    size_ratio: float = 0.25
    bloom_capacity: int = 1_000_000
    bloom_fp_rate: float = 0.01


@dataclass
class InsertionConfig:
    amount_tolerance: float = 0.01
    pairing: str = "all"


@dataclass
class SuppressionConfig:
    min_gas: int = BASE_TX_GAS
    gas_ratio: float = 0.99
    loop_count: int = 10
    max_gap: int = 1
    investment_lookback: int = 5
    claim_horizon: int = 10


@dataclass
class GasTokenConfig:
    gst2: list = field(default_factory=lambda: [GST2_ADDRESS])
    chi: list = field(default_factory=lambda: [CHI_ADDRESS])
    selfdestruct_min: int = 1

    def __post_init__(self):
        self.gst2 = [Address(a) for a in self.gst2]
        self.chi = [Address(a) for a in self.chi]


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    displacement: DisplacementConfig = field(default_factory=DisplacementConfig)
    insertion: InsertionConfig = field(default_factory=InsertionConfig)
    suppression: SuppressionConfig = field(default_factory=SuppressionConfig)
    gas_tokens: GasTokenConfig = field(default_factory=GasTokenConfig)
    n_jobs: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        sections = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "n_jobs":
                kwargs[key] = int(value)
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            section_cls = sections[key].default_factory().__class__
            allowed = {f.name for f in fields(section_cls)}
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"unknown key(s) in [{key}]: {', '.join(sorted(unknown))}")
            try:
                kwargs[key] = section_cls(**value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path: "str | Path | None") -> "Config":
        if path is None:
            return cls()
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)
