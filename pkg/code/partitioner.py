"""Multilevel k-way partitioning and recursive partition hierarchies.

kway_partition coarsens the graph by heavy-edge matching, grows an initial
k-way split on the coarsest graph, then projects it back level by level with
greedy boundary refinement. build_hierarchy applies it recursively: level 0 is
the coarsest partitioning and every level j splits each part of level j-1.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from errors import DataError
from graph_core import Graph
from hashing import derive_seed

log = logging.getLogger(__name__)

MAX_IMBALANCE = 1.10
INIT_TRIALS = 4
REFINE_PASSES = 8


@dataclass(frozen=True, eq=False)
class PartitionResult:
    membership: np.ndarray
    num_parts: int
    edge_cut: int
    balance: float


@dataclass(frozen=True, eq=False)
class PartitionHierarchy:
    k: int
    level_sizes: tuple[int, ...]
    membership: np.ndarray              # n x L, column j holds z_i(j)
    parents: list[np.ndarray] = field(default_factory=list)

    @property
    def num_levels(self) -> int:
        return len(self.level_sizes)

    @property
    def num_nodes(self) -> int:
        return self.membership.shape[0]

    @property
    def total_partitions(self) -> int:
        return sum(self.level_sizes)

    def level(self, j: int) -> np.ndarray:
        return self.membership[:, j]

    def check_nesting(self) -> bool:
        for j in range(1, self.num_levels):
            if not np.array_equal(self.parents[j][self.membership[:, j]], self.membership[:, j - 1]):
                return False
        return True

    def to_frame(self, node_ids: np.ndarray | None = None) -> pd.DataFrame:
        cols = {"node": np.arange(self.num_nodes) if node_ids is None else np.asarray(node_ids)}
        cols.update({f"z{j}": self.membership[:, j] for j in range(self.num_levels)})
        return pd.DataFrame(cols)

    @classmethod
    def from_membership(cls, membership: np.ndarray, k: int) -> "PartitionHierarchy":
        membership = np.asarray(membership, dtype=np.int64)
        if membership.ndim != 2 or membership.shape[1] < 1:
            raise DataError("membership must be an n x L matrix")
        sizes, parents = [], [np.empty(0, dtype=np.int64)]
        for j in range(membership.shape[1]):
            col = membership[:, j]
            m = int(col.max()) + 1 if len(col) else 0
            if col.min() < 0 or len(np.unique(col)) != m:
                raise DataError(f"level {j} partition ids are not dense")
            sizes.append(m)
            if j:
                parent = np.zeros(m, dtype=np.int64)
                parent[col] = membership[:, j - 1]
                if not np.array_equal(parent[col], membership[:, j - 1]):
                    raise DataError(f"level {j} does not nest inside level {j - 1}")
                parents.append(parent)
        return cls(k, tuple(sizes), membership, parents)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PartitionHierarchy):
            return NotImplemented
        return (
            self.k == other.k
            and self.level_sizes == other.level_sizes
            and np.array_equal(self.membership, other.membership)
        )

    __hash__ = None


def compute_k(n: int, alpha: float) -> int:
    if n < 1 or not 0.0 < alpha < 1.0:
        raise ValueError("compute_k needs n >= 1 and 0 < alpha < 1")
    raw = n ** alpha
    nearest = round(raw)
    if abs(raw - nearest) < 1e-9 * max(1.0, raw):
        raw = float(nearest)
    k = max(1, math.ceil(raw))
    log.debug("k = ceil(%d^%.4f) = ceil(%.4f) = %d", n, alpha, n ** alpha, k)
    return k


def nominal_level_sizes(n: int, k: int, levels: int) -> list[int]:
    return [min(k ** (j + 1), n) for j in range(levels)]


def edge_cut(graph: Graph, membership: np.ndarray) -> int:
    membership = np.asarray(membership)
    if len(membership) != graph.num_nodes:
        raise ValueError("membership must have one entry per node")
    if len(membership) and membership.min() < 0:
        raise ValueError("partition id out of range")
    u, v = graph.edges()
    return int((membership[u] != membership[v]).sum())


def part_balance(membership: np.ndarray, num_parts: int) -> float:
    counts = np.bincount(membership, minlength=num_parts)
    return float(counts.max() / (len(membership) / num_parts))


def random_partition(n: int, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    membership = np.empty(n, dtype=np.int64)
    membership[rng.permutation(n)] = np.arange(n) % k
    return membership


# ---------------------------------------------------------------- multilevel


def _weight_cap(total: int, k: int) -> int:
    return max(math.ceil(total / k), math.floor(MAX_IMBALANCE * total / k))


def _weight_floor(total: int, k: int) -> int:
    return max(1, math.floor((2.0 - MAX_IMBALANCE) * total / k))


def _match(adj: sp.csr_matrix, vwgt: list[int], max_vwgt: int, rng: np.random.Generator):
    indptr, indices, data = adj.indptr.tolist(), adj.indices.tolist(), adj.data.tolist()
    n = adj.shape[0]
    match = [-1] * n
    for u in rng.permutation(n).tolist():
        if match[u] != -1:
            continue
        best, best_w = u, 0.0
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if match[v] == -1 and data[e] > best_w and vwgt[u] + vwgt[v] <= max_vwgt:
                best, best_w = v, data[e]
        match[u] = best
        match[best] = u

    cmap = [-1] * n
    nc = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = cmap[match[u]] = nc
            nc += 1
    return np.asarray(cmap, dtype=np.int64), nc


def _contract(adj: sp.csr_matrix, vwgt: np.ndarray, cmap: np.ndarray, nc: int):
    n = adj.shape[0]
    proj = sp.csr_matrix((np.ones(n), (np.arange(n), cmap)), shape=(n, nc))
    coarse = (proj.T @ adj @ proj).tocoo()
    off = coarse.row != coarse.col
    coarse = sp.csr_matrix((coarse.data[off], (coarse.row[off], coarse.col[off])), shape=(nc, nc))
    coarse.sort_indices()
    return coarse, np.bincount(cmap, weights=vwgt, minlength=nc).astype(np.int64)


def _grow(adj: sp.csr_matrix, vwgt: list[int], k: int, rng: np.random.Generator) -> list[int]:
    """Greedy graph growing: each part expands along its strongest frontier connection."""
    indptr, indices, data = adj.indptr.tolist(), adj.indices.tolist(), adj.data.tolist()
    n = adj.shape[0]
    target = sum(vwgt) / k
    part = [-1] * n
    unassigned = n

    def random_free() -> int:
        free = [u for u in range(n) if part[u] == -1]
        return free[int(rng.integers(len(free)))]

    for p in range(k - 1):
        gain: dict[int, float] = {}
        weight = 0
        node = random_free()
        while True:
            part[node] = p
            weight += vwgt[node]
            unassigned -= 1
            gain.pop(node, None)
            for e in range(indptr[node], indptr[node + 1]):
                v = indices[e]
                if part[v] == -1:
                    gain[v] = gain.get(v, 0.0) + data[e]
            if weight >= target or unassigned <= k - 1 - p:
                break
            node = max(gain, key=lambda v: (gain[v], -v)) if gain else random_free()
            if weight + vwgt[node] - target > target - weight:
                break
    return [k - 1 if q == -1 else q for q in part]


def _connections(u: int, part: list[int], indptr, indices, data) -> dict[int, float]:
    conn: dict[int, float] = {}
    for e in range(indptr[u], indptr[u + 1]):
        q = part[indices[e]]
        conn[q] = conn.get(q, 0.0) + data[e]
    return conn


def _refine(adj, vwgt: list[int], part: list[int], k: int, cap: int, floor: int, rng) -> list[int]:
    """Greedy boundary refinement (single-node Kernighan-Lin moves under a weight cap)."""
    indptr, indices, data = adj.indptr.tolist(), adj.indices.tolist(), adj.data.tolist()
    n = adj.shape[0]
    pw = [0] * k
    for u in range(n):
        pw[part[u]] += vwgt[u]

    for _ in range(REFINE_PASSES):
        moved = 0
        for u in rng.permutation(n).tolist():
            own = part[u]
            if pw[own] - vwgt[u] < floor:
                continue
            conn = _connections(u, part, indptr, indices, data)
            if not conn or (len(conn) == 1 and own in conn):
                continue
            internal = conn.get(own, 0.0)
            over = pw[own] > cap
            best = None
            for q, c in conn.items():
                if q == own or pw[q] + vwgt[u] > cap:
                    continue
                gain = c - internal
                if gain > 0 or over or (gain == 0 and pw[q] + vwgt[u] < pw[own]):
                    cand = (-gain, pw[q], q)
                    if best is None or cand < best:
                        best = cand
            if best is not None:
                q = best[2]
                part[u] = q
                pw[own] -= vwgt[u]
                pw[q] += vwgt[u]
                moved += 1
        if not moved:
            break

    return _rebalance(adj, vwgt, part, pw, k, cap, floor)


def _rebalance(
    adj, vwgt: list[int], part: list[int], pw: list[int], k: int, cap: int, floor: int
) -> list[int]:
    """Moves nodes out of parts above the cap, then into parts below the floor."""
    indptr, indices, data = adj.indptr.tolist(), adj.indices.tolist(), adj.data.tolist()
    while max(pw) > cap:
        src = max(range(k), key=lambda q: (pw[q], -q))
        best = None
        for u in (u for u in range(len(part)) if part[u] == src):
            if pw[src] - vwgt[u] < floor:
                continue
            conn = _connections(u, part, indptr, indices, data)
            internal = conn.get(src, 0.0)
            for q in range(k):
                if q == src or pw[q] + vwgt[u] > cap:
                    continue
                cand = (-(conn.get(q, 0.0) - internal), pw[q], u, q)
                if best is None or cand < best:
                    best = cand
        if best is None:
            break
        _, _, u, q = best
        part[u] = q
        pw[src] -= vwgt[u]
        pw[q] += vwgt[u]

    while min(pw) < floor:
        dst = min(range(k), key=lambda q: (pw[q], q))
        best = None
        for u in range(len(part)):
            src = part[u]
            if src == dst or pw[src] - vwgt[u] < floor or pw[dst] + vwgt[u] > cap:
                continue
            conn = _connections(u, part, indptr, indices, data)
            cand = (-(conn.get(dst, 0.0) - conn.get(src, 0.0)), -pw[src], u)
            if best is None or cand < best:
                best = cand
        if best is None:
            break
        u = best[2]
        pw[part[u]] -= vwgt[u]
        pw[dst] += vwgt[u]
        part[u] = dst
    return part


def _cut_weight(adj: sp.csr_matrix, part: np.ndarray) -> float:
    coo = adj.tocoo()
    return float(coo.data[part[coo.row] != part[coo.col]].sum()) / 2


def _multilevel(graph: Graph, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    adj = graph.to_scipy()
    vwgt = np.ones(graph.num_nodes, dtype=np.int64)
    total = graph.num_nodes
    cap = _weight_cap(total, k)
    floor = _weight_floor(total, k)
    coarsen_to = max(30 * k, 200)

    levels = [(adj, vwgt)]
    cmaps: list[np.ndarray] = []
    while levels[-1][0].shape[0] > coarsen_to:
        cur_adj, cur_w = levels[-1]
        max_vwgt = max(1, int(1.5 * total / coarsen_to))
        cmap, nc = _match(cur_adj, cur_w.tolist(), max_vwgt, rng)
        if nc > 0.95 * cur_adj.shape[0]:
            break
        levels.append(_contract(cur_adj, cur_w, cmap, nc))
        cmaps.append(cmap)
    log.debug("coarsened %d -> %d nodes in %d levels", total, levels[-1][0].shape[0], len(cmaps))

    c_adj, c_w = levels[-1]
    best_part, best_key = None, None
    for _ in range(INIT_TRIALS):
        part = _refine(c_adj, c_w.tolist(), _grow(c_adj, c_w.tolist(), k, rng), k, cap, floor, rng)
        arr = np.asarray(part, dtype=np.int64)
        over = max(0, int(np.bincount(arr, weights=c_w, minlength=k).max()) - cap)
        key = (over, _cut_weight(c_adj, arr))
        if best_key is None or key < best_key:
            best_part, best_key = arr, key

    part = best_part
    for lvl in range(len(cmaps) - 1, -1, -1):
        f_adj, f_w = levels[lvl]
        part = np.asarray(_refine(f_adj, f_w.tolist(), part[cmaps[lvl]].tolist(), k, cap, floor, rng))
    return part.astype(np.int64)


def kway_partition(graph: Graph, k: int, seed: int) -> PartitionResult:
    n = graph.num_nodes
    if n == 0:
        raise DataError("cannot partition an empty graph")
    if k < 1:
        raise ValueError("k must be >= 1")

    if k == 1:
        membership = np.zeros(n, dtype=np.int64)
    elif k >= n:
        membership = np.arange(n, dtype=np.int64)
    else:
        membership = _multilevel(graph, k, seed)

    num_parts = int(membership.max()) + 1
    return PartitionResult(
        membership=membership,
        num_parts=num_parts,
        edge_cut=edge_cut(graph, membership),
        balance=part_balance(membership, num_parts),
    )


def build_hierarchy(graph: Graph, k: int, levels: int, seed: int, workers: int = 1) -> PartitionHierarchy:
    if k < 1 or levels < 1:
        raise ValueError("build_hierarchy needs k >= 1 and L >= 1")
    n = graph.num_nodes
    top = kway_partition(graph, k, seed)
    membership = np.zeros((n, levels), dtype=np.int64)
    membership[:, 0] = top.membership
    sizes = [top.num_parts]
    parents = [np.empty(0, dtype=np.int64)]

    for j in range(1, levels):
        prev = membership[:, j - 1]
        order = np.argsort(prev, kind="stable")
        groups = np.split(order, np.cumsum(np.bincount(prev, minlength=sizes[-1]))[:-1])

        def split(q: int, j: int = j, groups=groups) -> PartitionResult:
            nodes = groups[q]
            return kway_partition(graph.subgraph(nodes), min(k, len(nodes)), derive_seed(seed, f"level{j}", q))

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(split, range(sizes[-1])))

        offset = 0
        parent_map: list[int] = []
        for q, res in enumerate(results):
            membership[groups[q], j] = offset + res.membership
            parent_map.extend([q] * res.num_parts)
            offset += res.num_parts
        sizes.append(offset)
        parents.append(np.asarray(parent_map, dtype=np.int64))
        log.debug("level %d: %d partitions", j, offset)

    return PartitionHierarchy(k, tuple(sizes), membership, parents)


def level_summary(graph: Graph, hierarchy: PartitionHierarchy) -> pd.DataFrame:
    rows = []
    for j in range(hierarchy.num_levels):
        z = hierarchy.level(j)
        rows.append({
            "level": j,
            "partitions": hierarchy.level_sizes[j],
            "edge_cut": edge_cut(graph, z),
            "balance": part_balance(z, hierarchy.level_sizes[j]),
        })
    return pd.DataFrame(rows)


def save_hierarchy(hierarchy: PartitionHierarchy, path: str | Path, node_ids: np.ndarray | None = None) -> None:
    """Writes node,z0,...; the node column holds the original ids when the loader remapped them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if node_ids is not None and len(node_ids) != hierarchy.num_nodes:
        raise ValueError("node_ids must have one entry per node")
    hierarchy.to_frame(node_ids).to_csv(path, index=False, lineterminator="\n")


def load_hierarchy(path: str | Path, k: int, node_ids: np.ndarray | None = None) -> PartitionHierarchy:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Couldn't find hierarchy file: {path}")
    df = pd.read_csv(path)
    levels = [c for c in df.columns if c.startswith("z")]
    if list(df.columns) != ["node", *[f"z{j}" for j in range(len(levels))]] or not levels:
        raise DataError(f"{path}: expected header node,z0,...,z{{L-1}}")
    df = df.sort_values("node")
    expected = np.arange(len(df)) if node_ids is None else np.sort(np.asarray(node_ids))
    if not np.array_equal(df["node"].to_numpy(), expected):
        raise DataError(f"{path}: node column does not match the graph's node ids")
    return PartitionHierarchy.from_membership(df[levels].to_numpy(dtype=np.int64), k)
