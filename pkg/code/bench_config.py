"""Experiment configuration, result rows and the run manifest (JSON, validated with pydantic)."""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from embedding_schemes import SchemeConfig
from errors import ConfigError
from gnn_trainer import TrainConfig

log = logging.getLogger(__name__)

VERSION = "poshash-bench 1.0"


class SbmSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=1)
    blocks: int = Field(ge=1)
    p_in: float = Field(ge=0.0, le=1.0)
    p_out: float = Field(ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def _ordered(self) -> "SbmSpec":
        if self.p_out > self.p_in:
            raise ValueError("p_out must not exceed p_in")
        if self.blocks > self.n:
            raise ValueError("blocks must not exceed n")
        return self


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "dataset"
    edges: Path | None = None
    labels: Path | None = None
    undirected: bool = True
    sbm: SbmSpec | None = None
    num_nodes: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetConfig":
        files = self.edges is not None or self.labels is not None
        if files and (self.edges is None or self.labels is None):
            raise ValueError("'edges' and 'labels' must be given together")
        sources = sum([files, self.sbm is not None, self.num_nodes is not None])
        if sources != 1:
            raise ValueError("give exactly one of edges+labels, sbm or num_nodes")
        return self

    @property
    def trainable(self) -> bool:
        return self.num_nodes is None


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: DatasetConfig
    schemes: list[SchemeConfig] = Field(min_length=1)
    train: TrainConfig = TrainConfig()
    record_wall_time: bool = False

    @model_validator(mode="after")
    def _unique_labels(self) -> "BenchConfig":
        labels = [s.label for s in self.schemes]
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        if dupes:
            raise ValueError(f"scheme labels must be unique, repeated: {', '.join(dupes)} (set 'name')")
        return self

    def resolve_paths(self, base: Path) -> "BenchConfig":
        ds = self.dataset
        if ds.edges is None:
            return self
        update = {
            "edges": (base / ds.edges).resolve() if not ds.edges.is_absolute() else ds.edges,
            "labels": (base / ds.labels).resolve() if not ds.labels.is_absolute() else ds.labels,
        }
        return self.model_copy(update={"dataset": ds.model_copy(update=update)})

    def with_seed(self, seed: int | None) -> "BenchConfig":
        if seed is None:
            return self
        return self.model_copy(update={"train": self.train.model_copy(update={"seed": seed})})


class ResultRow(BaseModel):
    dataset: str
    scheme: str
    seed: int
    param_count: int
    memory_ratio: float
    test_accuracy: float | None
    epochs: int
    wall_seconds: float | None = None
    status: str = "ok"


class RunManifest(BaseModel):
    version: str = VERSION
    started: str
    finished: str
    config: BenchConfig
    dataset: dict[str, Any]
    seeds: list[int]
    shapes: dict[str, dict[str, Any]]
    hierarchies: list[dict[str, Any]] = []
    runs: list[dict[str, Any]] = []
    rows: list[ResultRow] = []


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def parse_config(data: Any, base: Path | None = None) -> BenchConfig:
    if isinstance(data, dict) and "config" in data and "rows" in data:
        # a run manifest: re-use its config snapshot
        data = data["config"]
    try:
        cfg = BenchConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(format_validation_error(err)) from None
    return cfg.resolve_paths(base) if base is not None else cfg


def load_config(path: str | Path) -> BenchConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Couldn't find config file: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err.msg} at line {err.lineno})") from None
    cfg = parse_config(data, path.parent)
    log.debug("loaded %d scheme(s) from %s", len(cfg.schemes), path)
    return cfg
