"""Declarative run configuration (YAML or JSON), validated before any run."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Optional, Union

import yaml
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from .adversary import SCENARIOS
from .baselines import BENCH_BLOCK_SIZE, BenchEnvironment
from .core import DEFAULT_BLOCK_SIZE
from .crypto import DEFAULT_KDF_COST
from .errors import ConfigError
from .metrics import GB, MB, VARIANTS, parse_size
from .netsim import LinkModel
from .protocol import ProtocolConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _size(v: Any) -> Any:
    if isinstance(v, str):
        try:
            return parse_size(v)
        except ValueError:
            raise ValueError(f"bad size {v!r}") from None
    return v


# bytes, or a string such as "100MB" (decimal units)
Size = Annotated[int, BeforeValidator(_size)]


class LinkSection(_Strict):
    rate: float = Field(64e6, gt=0)
    latency: float = Field(0.0, ge=0)
    loss_prob: float = Field(0.0, ge=0, le=1)
    dup_prob: float = Field(0.0, ge=0, le=1)

    def model(self) -> LinkModel:
        return LinkModel(self.rate, self.latency, self.loss_prob, self.dup_prob)


class ProtocolSection(_Strict):
    max_ret: int = Field(5, ge=1)
    retransmit_timeout: Optional[float] = Field(None, gt=0)
    parallel_streams: int = Field(1, ge=1)
    token_lifetime: Optional[float] = Field(None, gt=0)
    request_retry: Optional[float] = Field(None, gt=0)
    kdf_cost: int = Field(DEFAULT_KDF_COST, ge=2)

    @field_validator("kdf_cost")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError("kdf_cost must be a power of two")
        return v

    def model(self) -> ProtocolConfig:
        return ProtocolConfig(**self.model_dump())


class ClusterSection(_Strict):
    source_datanodes: int = Field(3, ge=1)
    target_datanodes: int = Field(3, ge=1)
    block_size: Size = Field(DEFAULT_BLOCK_SIZE, gt=0)


class BenchSection(_Strict):
    rate: float = Field(64e6, gt=0)
    latency: float = Field(0.0, ge=0)
    block_size: Size = Field(BENCH_BLOCK_SIZE, gt=0)

    def environment(self) -> BenchEnvironment:
        return BenchEnvironment(rate=self.rate, latency=self.latency, block_size=self.block_size)


class ScenarioEntry(_Strict):
    name: str
    attack: Optional[str] = None


PUBLISHED_SIZES = (100 * MB, 1 * GB, 2 * GB, 4 * GB, 8 * GB, 16 * GB)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    link: LinkSection = LinkSection()
    # target -> source direction of the data links; defaults to ``link``
    reverse_link: Optional[LinkSection] = None
    protocol: ProtocolSection = ProtocolSection()
    clusters: ClusterSection = ClusterSection()
    # migrate/attack: size of the one file moved; default two blocks plus a tail
    file_size: Optional[Size] = Field(None, ge=0)
    # bench
    file_sizes: list[Size] = list(PUBLISHED_SIZES)
    variants: list[str] = list(VARIANTS)
    bench: BenchSection = BenchSection()
    # attack
    scenarios: list[Union[str, ScenarioEntry]] = []

    @field_validator("file_sizes")
    @classmethod
    def _positive(cls, v):
        if not v or any(s <= 0 for s in v):
            raise ValueError("file_sizes must be a non-empty list of positive sizes")
        return v

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, v):
        unknown = sorted(set(v) - set(VARIANTS))
        if unknown or not v:
            raise ValueError(f"unknown variants {unknown}; known: {list(VARIANTS)}")
        return v

    @model_validator(mode="after")
    def _scenarios_known(self):
        for entry in self.scenarios:
            attack = entry if isinstance(entry, str) else (entry.attack or entry.name)
            if attack not in SCENARIOS:
                raise ValueError(f"unknown scenario {attack!r}; known: {sorted(SCENARIOS)}")
        return self

    def scenario_entries(self) -> list:
        return [e if isinstance(e, str) else e.model_dump(exclude_none=True) for e in self.scenarios]


def parse_config(data: Any) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: Union[str, Path, None]) -> RunConfig:
    """Read a YAML or JSON file (JSON is valid YAML); ``None`` gives the defaults."""
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return parse_config(data)
