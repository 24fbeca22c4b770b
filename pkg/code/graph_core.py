from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from errors import ConfigError, DataError

log = logging.getLogger(__name__)

# node ids must stay below the hashing prime 2^61 - 1
MAX_NODE_ID = (1 << 61) - 2

SPLITS = ("train", "valid", "test", "none")
SPLIT_FRACTIONS = (60, 20, 20)

_NODES_HEADER = re.compile(r"^#\s*nodes\s+(\d+)\s*$", re.I)


def unique_pairs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (u, v) pairs sorted by u, then v."""
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    first = np.ones(len(u), dtype=bool)
    first[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
    return u[first], v[first]


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in canonical CSR form: sorted neighbor lists, no self-loops."""

    num_nodes: int
    offsets: np.ndarray
    neighbors: np.ndarray

    def __post_init__(self) -> None:
        if len(self.offsets) != self.num_nodes + 1:
            raise ValueError("offsets must have length num_nodes + 1")
        if self.num_nodes and np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")
        if self.offsets[-1] != len(self.neighbors):
            raise ValueError("offsets[n] must equal the number of stored neighbors")
        if len(self.neighbors) and (self.neighbors.min() < 0 or self.neighbors.max() >= self.num_nodes):
            raise ValueError("neighbor index out of range")

    @classmethod
    def from_edges(cls, num_nodes: int, src: np.ndarray, dst: np.ndarray) -> tuple["Graph", int, int]:
        """Builds the canonical graph and returns it with (self_loops, duplicates) dropped."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        self_loops = int((~keep).sum())
        src, dst = src[keep], dst[keep]

        rows, cols = unique_pairs(np.concatenate([src, dst]), np.concatenate([dst, src]))
        duplicates = len(src) - len(rows) // 2

        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(num_nodes, offsets, cols.astype(np.int64)), self_loops, duplicates

    @classmethod
    def from_csr(cls, matrix: sp.csr_matrix) -> "Graph":
        matrix = sp.csr_matrix(matrix)
        matrix.sort_indices()
        return cls(matrix.shape[0], matrix.indptr.astype(np.int64), matrix.indices.astype(np.int64))

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def num_edges(self) -> int:
        return len(self.neighbors) // 2

    def neighbors_of(self, node: int) -> np.ndarray:
        return self.neighbors[self.offsets[node]:self.offsets[node + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Each undirected edge once, as (u, v) with u < v."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees)
        upper = rows < self.neighbors
        return rows[upper], self.neighbors[upper]

    def to_scipy(self) -> sp.csr_matrix:
        data = np.ones(len(self.neighbors), dtype=np.float64)
        return sp.csr_matrix((data, self.neighbors, self.offsets), shape=(self.num_nodes, self.num_nodes))

    def subgraph(self, nodes: np.ndarray) -> "Graph":
        nodes = np.asarray(nodes, dtype=np.int64)
        return Graph.from_csr(self.to_scipy()[nodes][:, nodes])

    def permute(self, perm: np.ndarray) -> "Graph":
        """Relabels node i as perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        u, v = self.edges()
        graph, _, _ = Graph.from_edges(self.num_nodes, perm[u], perm[v])
        return graph

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.neighbors, other.neighbors)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    labels: np.ndarray
    num_classes: int
    train_mask: np.ndarray
    valid_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.labels)
        for name in ("train_mask", "valid_mask", "test_mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have one entry per node")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        overlap = (
            self.train_mask.astype(int) + self.valid_mask.astype(int) + self.test_mask.astype(int)
        )
        if np.any(overlap > 1):
            raise ValueError("train/valid/test masks must be disjoint")

    @property
    def num_nodes(self) -> int:
        return len(self.labels)

    def split_of(self) -> np.ndarray:
        split = np.full(self.num_nodes, "none", dtype=object)
        split[self.train_mask] = "train"
        split[self.valid_mask] = "valid"
        split[self.test_mask] = "test"
        return split

    def permute(self, perm: np.ndarray) -> "LabeledDataset":
        def move(a: np.ndarray) -> np.ndarray:
            out = np.empty_like(a)
            out[perm] = a
            return out

        return LabeledDataset(
            move(self.labels), self.num_classes,
            move(self.train_mask), move(self.valid_mask), move(self.test_mask),
        )


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    csr: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def offsets(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def values(self) -> np.ndarray:
        return self.csr.data

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass(frozen=True)
class EdgeList:
    graph: Graph
    node_ids: np.ndarray
    self_loops: int
    duplicates: int


def _parse_pair(line: str, path: Path, lineno: int) -> tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise DataError(f"{path}:{lineno}: expected two node ids, got {line!r}")
    try:
        u, v = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"{path}:{lineno}: node ids must be integers, got {line!r}") from None
    if u < 0 or v < 0:
        raise DataError(f"{path}:{lineno}: node ids must be non-negative")
    if u > MAX_NODE_ID or v > MAX_NODE_ID:
        raise DataError(f"{path}:{lineno}: node id overflow (max {MAX_NODE_ID})")
    return u, v


def read_edge_list(path: str | Path, undirected: bool = True) -> EdgeList:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Couldn't find edge list: {path}")

    declared: int | None = None
    src: list[int] = []
    dst: list[int] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _NODES_HEADER.match(line)
                if m:
                    declared = int(m.group(1))
                continue
            u, v = _parse_pair(line, path, lineno)
            src.append(u)
            dst.append(v)

    s = np.asarray(src, dtype=np.int64)
    d = np.asarray(dst, dtype=np.int64)
    if declared is not None:
        n = declared
        if len(s) and max(s.max(), d.max()) >= n:
            raise DataError(f"{path}: node id exceeds declared node count {n}")
        node_ids = np.arange(n, dtype=np.int64)
    else:
        node_ids = np.unique(np.concatenate([s, d]))
        n = len(node_ids)
        s = np.searchsorted(node_ids, s)
        d = np.searchsorted(node_ids, d)
        if n and node_ids[-1] != n - 1:
            log.info("%s: remapped %d node ids (%d..%d) to 0..%d", path, n, node_ids[0], node_ids[-1], n - 1)
    if n == 0:
        raise DataError(f"{path}: empty graph")

    if not undirected:
        loops = s == d
        arcs = unique_pairs(s[~loops], d[~loops])
        reverse = unique_pairs(d[~loops], s[~loops])
        if not all(np.array_equal(x, y) for x, y in zip(arcs, reverse)):
            raise DataError(f"{path}: edge list is not symmetric; load it with symmetrization enabled")
        # symmetric input lists each edge in both directions; keep u < v
        keep = s < d
        s, d = s[keep | (s == d)], d[keep | (s == d)]

    graph, self_loops, duplicates = Graph.from_edges(n, s, d)
    if self_loops or duplicates:
        log.info("%s: dropped %d self-loops and %d duplicate edges", path, self_loops, duplicates)
    return EdgeList(graph, node_ids, self_loops, duplicates)


def load_edge_list(path: str | Path, undirected: bool = True) -> Graph:
    return read_edge_list(path, undirected).graph


def save_edge_list(graph: Graph, path: str | Path, node_ids: np.ndarray | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u, v = graph.edges()
    if node_ids is not None:
        u, v = node_ids[u], node_ids[v]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if node_ids is None:
            fh.write(f"# nodes {graph.num_nodes}\n")
        fh.writelines(f"{a} {b}\n" for a, b in zip(u.tolist(), v.tolist()))


def load_labels(path: str | Path, node_ids: np.ndarray) -> LabeledDataset:
    """Reads "node_id label split" lines; node ids are the original (file) ids."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Couldn't find labels file: {path}")
    n = len(node_ids)
    labels = np.full(n, -1, dtype=np.int64)
    split = np.full(n, "none", dtype=object)

    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in SPLITS:
                raise DataError(f"{path}:{lineno}: expected 'node_id label split', got {line!r}")
            try:
                node, label = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: node id and label must be integers") from None
            pos = int(np.searchsorted(node_ids, node))
            if pos >= n or node_ids[pos] != node:
                raise DataError(f"{path}:{lineno}: unknown node id {node}")
            if label < 0:
                raise DataError(f"{path}:{lineno}: labels must be non-negative")
            labels[pos] = label
            split[pos] = parts[2]

    missing = int((labels < 0).sum())
    if missing:
        raise DataError(f"{path}: {missing} nodes have no label line")
    return LabeledDataset(
        labels=labels,
        num_classes=int(labels.max()) + 1,
        train_mask=split == "train",
        valid_mask=split == "valid",
        test_mask=split == "test",
    )


def save_labels(ds: LabeledDataset, path: str | Path, node_ids: np.ndarray | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = np.arange(ds.num_nodes) if node_ids is None else node_ids
    split = ds.split_of()
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i} {y} {s}\n" for i, y, s in zip(ids.tolist(), ds.labels.tolist(), split))


def block_sizes(n: int, num_blocks: int) -> np.ndarray:
    sizes = np.full(num_blocks, n // num_blocks, dtype=np.int64)
    sizes[: n % num_blocks] += 1
    return sizes


def _triangle_pairs(idx: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    # pair index -> (r, c), r < c, enumerated row by row
    counts = size - 1 - np.arange(size, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    r = np.searchsorted(starts, idx, side="right") - 1
    return r, r + 1 + (idx - starts[r])


def split_masks(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = SPLIT_FRACTIONS[0] * n // 100
    n_valid = SPLIT_FRACTIONS[1] * n // 100
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][order[:n_train]] = True
    masks[1][order[n_train:n_train + n_valid]] = True
    masks[2][order[n_train + n_valid:]] = True
    return masks[0], masks[1], masks[2]


def generate_sbm(
    n: int, num_blocks: int, p_in: float, p_out: float, seed: int
) -> tuple[Graph, LabeledDataset]:
    if num_blocks < 1 or n < num_blocks:
        raise ConfigError(f"SBM needs 1 <= num_blocks <= n (got n={n}, num_blocks={num_blocks})")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ConfigError(f"SBM needs 0 <= p_out <= p_in <= 1 (got p_in={p_in}, p_out={p_out})")

    rng = np.random.default_rng(seed)
    sizes = block_sizes(n, num_blocks)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    src_parts: list[np.ndarray] = []
    dst_parts: list[np.ndarray] = []

    for a in range(num_blocks):
        for b in range(a, num_blocks):
            p = p_in if a == b else p_out
            pairs = sizes[a] * (sizes[a] - 1) // 2 if a == b else sizes[a] * sizes[b]
            if p == 0.0 or pairs == 0:
                continue
            count = int(rng.binomial(pairs, p))
            idx = np.sort(rng.choice(pairs, size=count, replace=False))
            if a == b:
                r, c = _triangle_pairs(idx, int(sizes[a]))
                src_parts.append(starts[a] + r)
                dst_parts.append(starts[a] + c)
            else:
                src_parts.append(starts[a] + idx // sizes[b])
                dst_parts.append(starts[b] + idx % sizes[b])

    src = np.concatenate(src_parts) if src_parts else np.empty(0, dtype=np.int64)
    dst = np.concatenate(dst_parts) if dst_parts else np.empty(0, dtype=np.int64)
    graph, _, _ = Graph.from_edges(n, src, dst)

    labels = np.repeat(np.arange(num_blocks, dtype=np.int64), sizes)
    train, valid, test = split_masks(n, rng)
    log.debug("SBM n=%d blocks=%d -> %d edges", n, num_blocks, graph.num_edges)
    return graph, LabeledDataset(labels, num_blocks, train, valid, test)


def normalized_adjacency(graph: Graph) -> SparseMatrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    n = graph.num_nodes
    a_hat = (graph.to_scipy() + sp.identity(n, format="csr", dtype=np.float64)).tocsr()
    a_hat.sort_indices()
    deg = graph.degrees + 1
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(a_hat.indptr))
    # 1/sqrt(d_i d_j) is exactly symmetric in floating point
    a_hat.data = 1.0 / np.sqrt((deg[rows] * deg[a_hat.indices]).astype(np.float64))
    return SparseMatrix(a_hat)


def spmm(m: SparseMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or m.shape[1] != x.shape[0]:
        raise ValueError(f"spmm dimension mismatch: {m.shape} @ {x.shape}")
    return np.asarray(m.csr @ x, dtype=np.float64)
