"""Graphs for the PageRank workload: CSR storage, generators, statistics and
a double-precision reference PageRank.

``CsrGraph`` stores *in-neighbour* lists (``targets[offsets[u]:offsets[u+1]]``
are the sources of edges into ``u``), which is what pull-based PageRank walks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import lru_fetch_count
from .sim import RngStream

MAGIC = b"FCSR"
VERSION = 1
U32_MAX = (1 << 32) - 1


class GraphError(ValueError):
    pass


class EmptyGraphError(GraphError):
    pass


class GraphParseError(GraphError):
    def __init__(self, msg: str, lineno: int):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class CsrGraph:
    n_nodes: int
    n_edges: int
    offsets: np.ndarray  # uint64, n+1
    targets: np.ndarray  # uint32, m

    def __post_init__(self):
        o, t = self.offsets, self.targets
        if len(o) != self.n_nodes + 1 or int(o[0]) != 0 or int(o[-1]) != self.n_edges:
            raise GraphError("offsets do not describe n_edges edges")
        if len(t) != self.n_edges:
            raise GraphError("targets length differs from n_edges")
        if self.n_nodes and np.any(np.diff(o.astype(np.int64)) < 0):
            raise GraphError("offsets must be non-decreasing")
        if self.n_edges and int(t.max()) >= self.n_nodes:
            raise GraphError("target id out of range")

    def in_neighbors(self, u: int) -> np.ndarray:
        return self.targets[int(self.offsets[u]):int(self.offsets[u + 1])]

    def in_degree(self) -> np.ndarray:
        return np.diff(self.offsets.astype(np.int64))

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.n_nodes).astype(np.int64)

    def edge_owner(self) -> np.ndarray:
        """Destination node of every stored edge, in storage order."""
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.in_degree())

    def __eq__(self, other) -> bool:
        return (isinstance(other, CsrGraph) and self.n_nodes == other.n_nodes
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.targets, other.targets))


@dataclass(frozen=True)
class GraphStats:
    max_in_degree: int
    clfr: float


def from_edges(src, dst, n_nodes: int, dedup: bool = False) -> CsrGraph:
    """Build the in-neighbour CSR of edges ``src[i] -> dst[i]``."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) != len(dst):
        raise GraphError("src and dst differ in length")
    if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n_nodes):
        raise GraphError(f"node id outside [0, {n_nodes})")
    if dedup and len(src):
        key = np.unique(dst * n_nodes + src)
        dst, src = key // n_nodes, key % n_nodes
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    counts = np.bincount(dst, minlength=n_nodes)
    offsets = np.zeros(n_nodes + 1, dtype=np.uint64)
    np.cumsum(counts, out=offsets[1:])
    return CsrGraph(n_nodes, int(len(src)), offsets, src.astype(np.uint32))


def load_edge_list(path, dedup: bool = False) -> CsrGraph:
    src, dst = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise GraphParseError(f"expected 'u v', got {line.strip()!r}", lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphParseError(f"non-integer node id in {line.strip()!r}", lineno) from None
            if u < 0 or v < 0:
                raise GraphParseError("negative node id", lineno)
            if u > U32_MAX - 1 or v > U32_MAX - 1:
                raise GraphParseError("node id does not fit in 32 bits", lineno)
            src.append(u)
            dst.append(v)
    if not src:
        raise EmptyGraphError(f"{path}: no edges")
    n = max(max(src), max(dst)) + 1
    return from_edges(src, dst, n, dedup)


def write_csr(graph: CsrGraph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HQQ", VERSION, graph.n_nodes, graph.n_edges))
        fh.write(graph.offsets.astype("<u8").tobytes())
        fh.write(graph.targets.astype("<u4").tobytes())


def read_csr(path) -> CsrGraph:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise GraphError(f"{path}: not a CSR file")
    version, n, m = struct.unpack_from("<HQQ", raw, 4)
    if version != VERSION:
        raise GraphError(f"{path}: unsupported version {version}")
    pos = 4 + struct.calcsize("<HQQ")
    need = pos + 8 * (n + 1) + 4 * m
    if len(raw) != need:
        raise GraphError(f"{path}: truncated or oversized ({len(raw)} != {need} bytes)")
    offsets = np.frombuffer(raw, dtype="<u8", count=n + 1, offset=pos).astype(np.uint64)
    targets = np.frombuffer(raw, dtype="<u4", count=m, offset=pos + 8 * (n + 1)).astype(np.uint32)
    return CsrGraph(n, m, offsets, targets)


# -- generators ---------------------------------------------------------------------------

KRON_INITIATOR = (0.57, 0.19, 0.19, 0.05)


def gen_kronecker(scale: int, edge_factor: int, seed: int) -> CsrGraph:
    """Recursive-matrix (R-MAT) sampling with the Graph500 initiator."""
    if not 0 <= scale <= 24:
        raise ValueError("scale must be in [0, 24]")
    n = 1 << scale
    m = edge_factor * n
    rng = RngStream(seed, "kronecker").numpy()
    a, b, c, _ = KRON_INITIATOR
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    for bit in range(scale):
        r = rng.random(m)
        right = (r >= a) & (r < a + b) | (r >= a + b + c)
        down = r >= a + b
        src |= down.astype(np.int64) << bit
        dst |= right.astype(np.int64) << bit
    # scramble ids so high-degree nodes are not clustered at low ids
    perm = rng.permutation(n)
    return from_edges(perm[src], perm[dst], n)


def gen_grid(width: int, height: int) -> CsrGraph:
    if width <= 0 or height <= 0:
        raise ValueError("grid dimensions must be positive")
    ids = np.arange(width * height).reshape(height, width)
    src, dst = [], []
    for a, b in ((ids[:, :-1], ids[:, 1:]), (ids[:-1, :], ids[1:, :])):
        src += [a.ravel(), b.ravel()]
        dst += [b.ravel(), a.ravel()]
    return from_edges(np.concatenate(src), np.concatenate(dst), width * height)


def gen_urand(nodes: int, edges: int, seed: int) -> CsrGraph:
    if nodes <= 0 or edges < 0:
        raise ValueError("nodes must be positive")
    rng = RngStream(seed, "urand").numpy()
    return from_edges(rng.integers(0, nodes, edges), rng.integers(0, nodes, edges), nodes)


def gen_clustered(nodes: int, edges: int, locality: float, seed: int) -> CsrGraph:
    """Sources of edges into ``u`` fall within ``locality * nodes`` ids of ``u``."""
    if nodes <= 0 or edges < 0:
        raise ValueError("nodes must be positive")
    if not 0.0 <= locality <= 1.0:
        raise ValueError("locality must be in [0, 1]")
    rng = RngStream(seed, "clustered").numpy()
    window = max(1, int(round(locality * nodes)))
    dst = rng.integers(0, nodes, edges)
    src = (dst + rng.integers(-window, window + 1, edges)) % nodes
    return from_edges(src, dst, nodes)


# -- statistics ---------------------------------------------------------------------------

def contrib_line_trace(graph: CsrGraph, entry_bytes: int = 4, line_bytes: int = 128) -> np.ndarray:
    """Line index of every phase-2 contribution read, in traversal order."""
    return graph.targets.astype(np.int64) * entry_bytes // line_bytes


def compute_clfr(graph: CsrGraph, cache_bytes: int, line_bytes: int = 128) -> float:
    if cache_bytes < line_bytes:
        raise ValueError("cache must hold at least one line")
    if graph.n_edges == 0:
        return 1.0
    fetches = lru_fetch_count(contrib_line_trace(graph, 4, line_bytes), cache_bytes // line_bytes)
    return min(1.0, max(fetches / graph.n_edges, 1e-12))


def graph_stats(graph: CsrGraph, cache_bytes: int) -> GraphStats:
    max_in = int(graph.in_degree().max()) if graph.n_nodes else 0
    return GraphStats(max_in, compute_clfr(graph, cache_bytes))


# -- reference PageRank -----------------------------------------------------------------

def reference_pagerank(graph: CsrGraph, iterations: int, damping: float = 0.85,
                       redistribute: bool = False) -> np.ndarray:
    """Pull-based PageRank in float64.  Dangling nodes contribute nothing
    unless ``redistribute`` spreads their mass uniformly."""
    n = graph.n_nodes
    if n == 0:
        return np.zeros(0)
    outdeg = graph.out_degree()
    owner = graph.edge_owner()
    src = graph.targets.astype(np.int64)
    score = np.full(n, 1.0 / n)
    base = (1.0 - damping) / n
    dangling = outdeg == 0
    for _ in range(iterations):
        contrib = np.where(dangling, 0.0, score / np.maximum(outdeg, 1))
        sums = np.bincount(owner, weights=contrib[src], minlength=n)
        if redistribute:
            sums += score[dangling].sum() / n
        score = base + damping * sums
    return score
