"""Trainable node-embedding schemes with a shared forward/backward/param-count contract.

Every scheme maps node ids to d-dimensional rows. ``forward(ids)`` returns the
rows, ``backward(ids, upstream)`` accumulates parameter gradients for the same
ids, ``parameters()`` lists the tables for the optimizer. One-hot inputs are
never built; lookups index the tables directly.
"""
from __future__ import annotations

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigError, DataError
from hashing import UniversalHash, derive_seed, hash_family
from partitioner import PartitionHierarchy, compute_k, nominal_level_sizes

log = logging.getLogger(__name__)


class SchemeKind(str, Enum):
    FULL = "FullEmb"
    HASH_TRICK = "HashTrick"
    BLOOM = "Bloom"
    HASH_EMB = "HashEmb"
    DHE = "DHE"
    POS = "PosEmb"
    POS_FULL = "PosFullEmb"
    POS_HASH_INTRA = "PosHashEmbIntra"
    POS_HASH_INTER = "PosHashEmbInter"
    RANDOM_PART = "RandomPart"


BUCKET_KINDS = {SchemeKind.HASH_TRICK, SchemeKind.BLOOM, SchemeKind.HASH_EMB}
POSITION_KINDS = {
    SchemeKind.POS, SchemeKind.POS_FULL, SchemeKind.POS_HASH_INTRA, SchemeKind.POS_HASH_INTER,
}
NODE_HASH_KINDS = {SchemeKind.POS_HASH_INTRA, SchemeKind.POS_HASH_INTER}


class SchemeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: SchemeKind
    name: str | None = None
    dim: int = Field(64, ge=1)
    buckets: int | None = Field(None, ge=1)
    hashes: int = Field(2, ge=1)
    alpha: float | None = Field(0.25, gt=0.0, lt=1.0)
    k: int | None = Field(None, ge=2)
    levels: int = Field(3, ge=1)
    lam: float = 1.0
    c: int | None = Field(None, ge=1)
    b: int | None = Field(None, ge=1)
    memory_fraction: float | None = Field(None, gt=0.0)
    dhe_encoding: int = Field(1024, ge=1)
    dhe_hidden: tuple[int, ...] = (2000,)
    dhe_buckets: int = Field(1_000_000, ge=2)

    @model_validator(mode="after")
    def _required_fields(self) -> "SchemeConfig":
        if self.kind in BUCKET_KINDS and self.buckets is None and self.memory_fraction is None:
            raise ValueError(f"{self.kind.value} needs 'buckets' or 'memory_fraction'")
        if (self.kind in POSITION_KINDS or self.kind is SchemeKind.RANDOM_PART) and (
            self.k is None and self.alpha is None
        ):
            raise ValueError(f"{self.kind.value} needs 'k' or 'alpha'")
        if any(w < 1 for w in self.dhe_hidden):
            raise ValueError("dhe_hidden widths must be positive")
        if self.kind is SchemeKind.POS_HASH_INTRA and self.b is not None and self.c is not None:
            raise ValueError("give either 'b' or 'c' for PosHashEmbIntra, not both")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in POSITION_KINDS:
            base = f"{self.kind.value}-{self.levels}level"
            return f"{base}-h{self.hashes}" if self.kind in NODE_HASH_KINDS else base
        if self.kind is SchemeKind.HASH_EMB:
            return f"{self.kind.value}-h{self.hashes}"
        return self.kind.value


@dataclass(frozen=True)
class SchemeShapes:
    kind: SchemeKind
    num_nodes: int
    dim: int
    buckets: int | None = None
    hashes: int | None = None
    k: int | None = None
    level_sizes: tuple[int, ...] = ()
    level_dims: tuple[int, ...] = ()
    c: int | None = None
    b: int | None = None
    dhe_layers: tuple[tuple[int, int], ...] = ()
    lam: float = 1.0

    def as_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = self.kind.value
        return {key: val for key, val in out.items() if val not in (None, ())}


def level_dims(dim: int, levels: int) -> tuple[int, ...]:
    return tuple(max(1, dim >> j) for j in range(levels))


def default_c(n: int, m0: int) -> int:
    return max(1, math.ceil(math.sqrt(n / m0)))


def count_params(shapes: SchemeShapes) -> int:
    n, d, kind = shapes.num_nodes, shapes.dim, shapes.kind
    pos = sum(m * dj for m, dj in zip(shapes.level_sizes, shapes.level_dims))
    if kind is SchemeKind.FULL:
        return n * d
    if kind in (SchemeKind.HASH_TRICK, SchemeKind.BLOOM, SchemeKind.RANDOM_PART):
        return shapes.buckets * d
    if kind is SchemeKind.HASH_EMB:
        return shapes.buckets * d + n * shapes.hashes
    if kind is SchemeKind.DHE:
        return sum(i * o + o for i, o in shapes.dhe_layers)
    if kind is SchemeKind.POS:
        return pos
    if kind is SchemeKind.POS_FULL:
        return pos + n * d
    return pos + shapes.b * d + n * shapes.hashes


def _fit_budget(cfg: SchemeConfig, n: int, pos: int, m0: int | None) -> dict:
    budget = math.floor(cfg.memory_fraction * n * cfg.dim)
    d, h = cfg.dim, cfg.hashes
    if cfg.kind in (SchemeKind.HASH_TRICK, SchemeKind.BLOOM):
        fitted = {"buckets": budget // d}
    elif cfg.kind is SchemeKind.HASH_EMB:
        fitted = {"buckets": (budget - n * h) // d}
    elif cfg.kind is SchemeKind.POS_HASH_INTER:
        fitted = {"b": (budget - pos - n * h) // d}
    elif cfg.kind is SchemeKind.POS_HASH_INTRA:
        c = (budget - pos - n * h) // d // m0
        fitted = {"c": c, "b": c * m0}
    elif cfg.kind is SchemeKind.DHE:
        fitted = {"width": (budget - d) // (cfg.dhe_encoding + 1 + d)}
    else:
        raise ConfigError(f"memory_fraction is not supported for {cfg.kind.value}")
    if min(fitted.values()) < 1:
        raise ConfigError(f"memory_fraction={cfg.memory_fraction} is too small for {cfg.label}")
    return fitted


def resolve_shapes(
    cfg: SchemeConfig, num_nodes: int, level_sizes: tuple[int, ...] | list[int] | None = None
) -> SchemeShapes:
    """Derives every table shape from the config; no tables are allocated."""
    n, d, kind = num_nodes, cfg.dim, cfg.kind
    k = cfg.k if cfg.k is not None else (compute_k(n, cfg.alpha) if cfg.alpha is not None else None)

    if kind is SchemeKind.FULL:
        return SchemeShapes(kind, n, d)
    if kind is SchemeKind.RANDOM_PART:
        return SchemeShapes(kind, n, d, buckets=k, hashes=1, k=k)
    if kind is SchemeKind.DHE:
        hidden = cfg.dhe_hidden
        if cfg.memory_fraction is not None:
            hidden = (_fit_budget(cfg, n, 0, None)["width"],)
        widths = (cfg.dhe_encoding, *hidden, d)
        return SchemeShapes(kind, n, d, hashes=cfg.dhe_encoding, buckets=cfg.dhe_buckets,
                            dhe_layers=tuple(zip(widths[:-1], widths[1:])))
    if kind in BUCKET_KINDS:
        buckets = cfg.buckets
        if cfg.memory_fraction is not None:
            buckets = _fit_budget(cfg, n, 0, None)["buckets"]
        hashes = 1 if kind is SchemeKind.HASH_TRICK else cfg.hashes
        return SchemeShapes(kind, n, d, buckets=buckets, hashes=hashes)

    sizes = tuple(level_sizes[: cfg.levels]) if level_sizes is not None else tuple(
        nominal_level_sizes(n, k, cfg.levels)
    )
    if len(sizes) != cfg.levels:
        raise ConfigError(f"{cfg.label} needs {cfg.levels} hierarchy levels, got {len(sizes)}")
    dims = level_dims(d, cfg.levels)
    if kind in (SchemeKind.POS, SchemeKind.POS_FULL):
        return SchemeShapes(kind, n, d, k=k, level_sizes=sizes, level_dims=dims, lam=cfg.lam)

    m0 = sizes[0]
    pos = sum(m * dj for m, dj in zip(sizes, dims))
    c, b = default_c(n, m0), None
    if cfg.memory_fraction is not None:
        fitted = _fit_budget(cfg, n, pos, m0)
        c, b = fitted.get("c"), fitted["b"]
    elif cfg.c is not None:
        c = cfg.c
    elif cfg.b is not None:
        b = cfg.b
        if kind is SchemeKind.POS_HASH_INTRA:
            c = math.ceil(cfg.b / m0)
            if c * m0 != cfg.b:
                log.info("%s: b=%d is not a multiple of m_0=%d, using b=%d", cfg.label, cfg.b, m0, c * m0)
    if kind is SchemeKind.POS_HASH_INTRA:
        b = c * m0
    elif b is None:
        b = c * m0
    return SchemeShapes(kind, n, d, hashes=cfg.hashes, k=k, level_sizes=sizes, level_dims=dims,
                        c=c if kind is SchemeKind.POS_HASH_INTRA else None, b=b, lam=cfg.lam)


# ---------------------------------------------------------------- parameters


class Parameter:
    def __init__(self, name: str, values: np.ndarray, decay: bool = True):
        self.name = name
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.decay = decay

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


class EmbeddingTable(Parameter):
    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def lookup(self, idx: np.ndarray) -> np.ndarray:
        return self.values[idx]

    def accumulate(self, idx: np.ndarray, grad: np.ndarray) -> None:
        np.add.at(self.grad, idx, grad)


class ImportanceWeights(EmbeddingTable):
    """Per-node importance scalars Y (n x h); never weight-decayed."""

    def __init__(self, name: str, num_nodes: int, hashes: int):
        super().__init__(name, np.full((num_nodes, hashes), 1.0 / hashes), decay=False)


def uniform_table(name: str, rng: np.random.Generator, rows: int, dim: int) -> EmbeddingTable:
    bound = 1.0 / math.sqrt(dim)
    return EmbeddingTable(name, rng.uniform(-bound, bound, size=(rows, dim)))


def bucket_matrix(functions: list[UniversalHash], num_nodes: int) -> np.ndarray:
    ids = np.arange(num_nodes, dtype=np.int64)
    return np.stack([f.hash_array(ids) for f in functions], axis=1)


# ---------------------------------------------------------------- schemes


class EmbeddingScheme(ABC):
    kind: SchemeKind

    def __init__(self, num_nodes: int, dim: int):
        self.num_nodes = num_nodes
        self.dim = dim
        self.shapes: SchemeShapes | None = None

    @abstractmethod
    def forward(self, ids: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def backward(self, ids: np.ndarray, upstream: np.ndarray) -> None: ...

    @abstractmethod
    def parameters(self) -> list[Parameter]: ...

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def hash_functions(self) -> dict[str, list[UniversalHash]]:
        return {}

    def _ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_nodes):
            raise ValueError(f"node id out of range [0, {self.num_nodes})")
        return ids


class FullEmbedding(EmbeddingScheme):
    kind = SchemeKind.FULL

    def __init__(self, num_nodes: int, dim: int, rng: np.random.Generator, name: str = "W"):
        super().__init__(num_nodes, dim)
        self.table = uniform_table(name, rng, num_nodes, dim)

    def forward(self, ids):
        return self.table.lookup(self._ids(ids))

    def backward(self, ids, upstream):
        self.table.accumulate(self._ids(ids), upstream)

    def parameters(self):
        return [self.table]


class HashTrickEmbedding(EmbeddingScheme):
    kind = SchemeKind.HASH_TRICK

    def __init__(self, num_nodes: int, dim: int, function: UniversalHash, rng: np.random.Generator):
        super().__init__(num_nodes, dim)
        self.function = function
        self.table = uniform_table("W", rng, function.m, dim)
        self.bucket = function.hash_array(np.arange(num_nodes, dtype=np.int64))

    def forward(self, ids):
        return self.table.lookup(self.bucket[self._ids(ids)])

    def backward(self, ids, upstream):
        self.table.accumulate(self.bucket[self._ids(ids)], upstream)

    def parameters(self):
        return [self.table]

    def hash_functions(self):
        return {"bucket": [self.function]}


class RandomPartEmbedding(HashTrickEmbedding):
    """Hashing trick with B = k: nodes land in k random "partitions"."""

    kind = SchemeKind.RANDOM_PART


class BloomEmbedding(EmbeddingScheme):
    kind = SchemeKind.BLOOM

    def __init__(self, num_nodes: int, dim: int, functions: list[UniversalHash], rng: np.random.Generator):
        super().__init__(num_nodes, dim)
        self.functions = functions
        self.table = uniform_table("W", rng, functions[0].m, dim)
        self.buckets = bucket_matrix(functions, num_nodes)

    def forward(self, ids):
        bk = self.buckets[self._ids(ids)]
        out = self.table.lookup(bk[:, 0])
        for j in range(1, bk.shape[1]):
            out += self.table.lookup(bk[:, j])
        return out

    def backward(self, ids, upstream):
        bk = self.buckets[self._ids(ids)]
        for j in range(bk.shape[1]):
            self.table.accumulate(bk[:, j], upstream)

    def parameters(self):
        return [self.table]

    def hash_functions(self):
        return {"bucket": self.functions}


class WeightedHashSum(EmbeddingScheme):
    """Importance-weighted sum of h hashed rows: sum_j Y[i, j] * X[index_j(i)]."""

    def __init__(self, num_nodes: int, dim: int, rows: int, index: np.ndarray,
                 rng: np.random.Generator, table_name: str = "W", weights_name: str = "Y"):
        super().__init__(num_nodes, dim)
        self.table = uniform_table(table_name, rng, rows, dim)
        self.importance = ImportanceWeights(weights_name, num_nodes, index.shape[1])
        self.index = index

    def forward(self, ids):
        ids = self._ids(ids)
        idx = self.index[ids]
        y = self.importance.values[ids]
        out = y[:, 0:1] * self.table.lookup(idx[:, 0])
        for j in range(1, idx.shape[1]):
            out += y[:, j:j + 1] * self.table.lookup(idx[:, j])
        return out

    def backward(self, ids, upstream):
        ids = self._ids(ids)
        idx = self.index[ids]
        y = self.importance.values[ids]
        for j in range(idx.shape[1]):
            self.table.accumulate(idx[:, j], y[:, j:j + 1] * upstream)
            dy = np.einsum("ij,ij->i", self.table.lookup(idx[:, j]), upstream)
            np.add.at(self.importance.grad, (ids, j), dy)

    def parameters(self):
        return [self.table, self.importance]


class HashEmbedding(WeightedHashSum):
    kind = SchemeKind.HASH_EMB

    def __init__(self, num_nodes: int, dim: int, functions: list[UniversalHash], rng: np.random.Generator):
        super().__init__(num_nodes, dim, functions[0].m, bucket_matrix(functions, num_nodes), rng)
        self.functions = functions

    def hash_functions(self):
        return {"bucket": self.functions}


class InterNodeComponent(WeightedHashSum):
    """b embeddings shared by all nodes; x_i = sum_j Y[i, j] X[H_j(i) mod b]."""

    kind = SchemeKind.POS_HASH_INTER

    def __init__(self, num_nodes: int, dim: int, functions: list[UniversalHash], rng: np.random.Generator):
        super().__init__(num_nodes, dim, functions[0].m, bucket_matrix(functions, num_nodes), rng,
                         table_name="X")
        self.functions = functions

    def hash_functions(self):
        return {"node": self.functions}


class IntraNodeComponent(WeightedHashSum):
    """c embeddings per level-0 partition, stored stacked as X_0..X_{m0-1} (m0*c rows)."""

    kind = SchemeKind.POS_HASH_INTRA

    def __init__(self, num_nodes: int, dim: int, top_level: np.ndarray, num_top: int,
                 functions: list[UniversalHash], rng: np.random.Generator):
        c = functions[0].m
        index = np.asarray(top_level, dtype=np.int64)[:, None] * c + bucket_matrix(functions, num_nodes)
        super().__init__(num_nodes, dim, num_top * c, index, rng, table_name="X")
        self.functions = functions
        self.c = c

    def partition_table(self, q: int) -> np.ndarray:
        return self.table.values[q * self.c:(q + 1) * self.c]

    def hash_functions(self):
        return {"node": self.functions}


def dhe_transform(buckets: np.ndarray, num_buckets: int) -> np.ndarray:
    return 2.0 * np.asarray(buckets, dtype=np.float64) / (num_buckets - 1) - 1.0


class DeepHashEmbedding(EmbeddingScheme):
    """Dense hash encoding fed through a ReLU feed-forward network; no per-node storage."""

    kind = SchemeKind.DHE

    def __init__(self, num_nodes: int, dim: int, functions: list[UniversalHash],
                 hidden: tuple[int, ...], rng: np.random.Generator):
        super().__init__(num_nodes, dim)
        self.functions = functions
        self.num_buckets = functions[0].m
        widths = (len(functions), *hidden, dim)
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(Parameter(f"W{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out))))
            self.biases.append(Parameter(f"b{i}", np.zeros(fan_out), decay=False))
        self._buckets: np.ndarray | None = None

    def encode(self, ids) -> np.ndarray:
        ids = self._ids(ids)
        if self._buckets is None:
            self._buckets = bucket_matrix(self.functions, self.num_nodes).astype(np.int32)
        return dhe_transform(self._buckets[ids], self.num_buckets)

    def _activations(self, ids) -> list[np.ndarray]:
        acts = [self.encode(ids)]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.values + b.values
            acts.append(z if i == last else np.maximum(z, 0.0))
        return acts

    def forward(self, ids):
        return self._activations(ids)[-1]

    def backward(self, ids, upstream):
        acts = self._activations(ids)
        grad = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            self.weights[i].grad += acts[i].T @ grad
            self.biases[i].grad += grad.sum(axis=0)
            if i:
                grad = (grad @ self.weights[i].values.T) * (acts[i] > 0.0)

    def parameters(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def hash_functions(self):
        return {"dhe": self.functions}


class PositionEmbedding(EmbeddingScheme):
    """Sum of partition embeddings along a node's hierarchy path.

    Level j holds an m_j x d_j table with d_j = d / 2^j; each level's row is
    zero-extended to width d before summation.
    """

    kind = SchemeKind.POS

    def __init__(self, hierarchy: PartitionHierarchy, dim: int, levels: int, rng: np.random.Generator):
        super().__init__(hierarchy.num_nodes, dim)
        if levels > hierarchy.num_levels:
            raise ValueError(f"hierarchy has {hierarchy.num_levels} levels, {levels} requested")
        self.membership = hierarchy.membership[:, :levels]
        self.tables = [
            uniform_table(f"P{j}", rng, hierarchy.level_sizes[j], dj)
            for j, dj in enumerate(level_dims(dim, levels))
        ]

    def forward(self, ids):
        ids = self._ids(ids)
        out = np.zeros((len(ids), self.dim))
        for j, table in enumerate(self.tables):
            out[:, : table.dim] += table.lookup(self.membership[ids, j])
        return out

    def backward(self, ids, upstream):
        ids = self._ids(ids)
        for j, table in enumerate(self.tables):
            table.accumulate(self.membership[ids, j], upstream[:, : table.dim])

    def parameters(self):
        return list(self.tables)


class PositionPlusNode(EmbeddingScheme):
    """v_i = p_i + lam * x_i (PosHashEmb Intra/Inter, PosFullEmb)."""

    def __init__(self, kind: SchemeKind, position: PositionEmbedding, node: EmbeddingScheme, lam: float = 1.0):
        if position.dim != node.dim:
            raise ValueError(f"component width mismatch: {position.dim} != {node.dim}")
        super().__init__(position.num_nodes, position.dim)
        self.kind = kind
        self.position = position
        self.node = node
        self.lam = lam
        for p in position.parameters():
            p.name = f"pos.{p.name}"
        for p in node.parameters():
            p.name = f"node.{p.name}"

    def forward(self, ids):
        return self.position.forward(ids) + self.lam * self.node.forward(ids)

    def backward(self, ids, upstream):
        self.position.backward(ids, upstream)
        self.node.backward(ids, self.lam * upstream)

    def parameters(self):
        return self.position.parameters() + self.node.parameters()

    def hash_functions(self):
        return self.node.hash_functions()


def build_scheme(
    cfg: SchemeConfig, num_nodes: int, seed: int, hierarchy: PartitionHierarchy | None = None
) -> EmbeddingScheme:
    kind = cfg.kind
    if kind in POSITION_KINDS and hierarchy is None:
        raise ValueError(f"{cfg.label} needs a partition hierarchy")
    if hierarchy is not None and hierarchy.num_nodes != num_nodes:
        raise DataError("hierarchy does not cover every node")
    shapes = resolve_shapes(cfg, num_nodes, hierarchy.level_sizes if hierarchy is not None else None)
    rng = np.random.default_rng(derive_seed(seed, "init", 0))
    n, d = num_nodes, cfg.dim

    if kind is SchemeKind.FULL:
        scheme: EmbeddingScheme = FullEmbedding(n, d, rng)
    elif kind in (SchemeKind.HASH_TRICK, SchemeKind.RANDOM_PART):
        cls = RandomPartEmbedding if kind is SchemeKind.RANDOM_PART else HashTrickEmbedding
        scheme = cls(n, d, hash_family(seed, "bucket", 1, shapes.buckets)[0], rng)
    elif kind is SchemeKind.BLOOM:
        scheme = BloomEmbedding(n, d, hash_family(seed, "bucket", shapes.hashes, shapes.buckets), rng)
    elif kind is SchemeKind.HASH_EMB:
        scheme = HashEmbedding(n, d, hash_family(seed, "bucket", shapes.hashes, shapes.buckets), rng)
    elif kind is SchemeKind.DHE:
        functions = hash_family(seed, "dhe", cfg.dhe_encoding, cfg.dhe_buckets)
        hidden = tuple(o for _, o in shapes.dhe_layers[:-1])
        scheme = DeepHashEmbedding(n, d, functions, hidden, rng)
    else:
        position = PositionEmbedding(hierarchy, d, cfg.levels, rng)
        if kind is SchemeKind.POS:
            scheme = position
        elif kind is SchemeKind.POS_FULL:
            scheme = PositionPlusNode(kind, position, FullEmbedding(n, d, rng, name="X"), cfg.lam)
        elif kind is SchemeKind.POS_HASH_INTER:
            node = InterNodeComponent(n, d, hash_family(seed, "node", shapes.hashes, shapes.b), rng)
            scheme = PositionPlusNode(kind, position, node, cfg.lam)
        else:
            functions = hash_family(seed, "node", shapes.hashes, shapes.c)
            node = IntraNodeComponent(n, d, hierarchy.level(0), hierarchy.level_sizes[0], functions, rng)
            scheme = PositionPlusNode(kind, position, node, cfg.lam)

    scheme.shapes = shapes
    return scheme


def save_checkpoint(
    scheme: EmbeddingScheme, cfg: SchemeConfig, seed: int, path: str | Path,
    hierarchy: PartitionHierarchy | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": cfg.model_dump(mode="json"),
        "seed": seed,
        "num_nodes": scheme.num_nodes,
        "hash": {tag: [f.as_dict() for f in fs] for tag, fs in scheme.hash_functions().items()},
        "k": hierarchy.k if hierarchy is not None else None,
    }
    arrays = {f"param__{p.name}": p.values for p in scheme.parameters()}
    if hierarchy is not None:
        arrays["hierarchy"] = hierarchy.membership
    with path.open("wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> tuple[EmbeddingScheme, SchemeConfig, PartitionHierarchy | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Couldn't find checkpoint: {path}")
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        cfg = SchemeConfig.model_validate(meta["config"])
        hierarchy = None
        if "hierarchy" in data.files:
            hierarchy = PartitionHierarchy.from_membership(data["hierarchy"], meta["k"])
        scheme = build_scheme(cfg, meta["num_nodes"], meta["seed"], hierarchy)
        for p in scheme.parameters():
            p.values[...] = data[f"param__{p.name}"]
    return scheme, cfg, hierarchy
