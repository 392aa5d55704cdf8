"""Graph, feature and embedding containers plus their file formats.

Graphs are undirected and stored in CSR form with every edge kept as two
directed arcs.  Feature and embedding matrices are plain ``float64`` numpy
arrays; the helpers here only validate and (de)serialise them.

Binary layouts (all integers u64 little endian, floats f64 little endian)::

    matrix  : b"SDM1" | rows | dim | rows*dim values, row-major
    graph   : b"SDG1" | n | 2m | row_offsets (n+1) | col_indices (2m)
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError

MATRIX_MAGIC = b"SDM1"
GRAPH_MAGIC = b"SDG1"

_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph in CSR form.

    ``col_indices[row_offsets[z]:row_offsets[z + 1]]`` lists the neighbours
    of ``z`` in ascending order.  Self-loops are never stored.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        n = self.num_nodes
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (n + 1,) or ro[0] != 0 or ro[-1] != ci.size:
            raise DataError("row_offsets inconsistent with col_indices")
        if np.any(np.diff(ro) < 0):
            raise DataError("row_offsets must be nondecreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise DataError("column index out of range")

    @classmethod
    def from_edges(cls, num_nodes, edges):
        """Build a symmetric CSR graph from an iterable of ``(u, v)`` pairs.

        Duplicates (in either orientation) are merged and self-loops dropped.
        """
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise DataError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        arcs = np.concatenate([e, e[:, ::-1]], axis=0)
        if arcs.size:
            arcs = np.unique(arcs, axis=0)  # lexicographic: sorted by row, then column
        counts = np.bincount(arcs[:, 0], minlength=num_nodes) if arcs.size else np.zeros(num_nodes, np.int64)
        ro = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=ro[1:])
        return cls(num_nodes, ro, arcs[:, 1] if arcs.size else np.zeros(0, np.int64))

    @property
    def num_edges(self):
        return self.col_indices.size // 2

    @cached_property
    def degrees(self):
        return np.diff(self.row_offsets)

    def neighbors(self, z):
        return self.col_indices[self.row_offsets[z]:self.row_offsets[z + 1]]

    def to_scipy(self):
        data = np.ones(self.col_indices.size)
        return sp.csr_matrix((data, self.col_indices, self.row_offsets),
                             shape=(self.num_nodes, self.num_nodes))


def neighbors(g: Graph, z: int) -> list[int]:
    """Sorted neighbour ids of ``z`` (never includes ``z`` itself)."""
    if not 0 <= z < g.num_nodes:
        raise IndexError(f"node {z} out of range for graph with {g.num_nodes} nodes")
    return g.neighbors(z).tolist()


def hop_distances(g: Graph, z: int, max_hop: int) -> dict[int, int]:
    """BFS distances from ``z`` to every node within ``max_hop`` hops."""
    dist = {z: 0}
    queue = deque([z])
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du == max_hop:
            continue
        for v in g.neighbors(u).tolist():
            if v not in dist:
                dist[v] = du + 1
                queue.append(v)
    return dist


def k_hop_ball(g: Graph, z: int, k: int) -> np.ndarray:
    """Sorted ids of all nodes within ``k`` hops of ``z``, including ``z``."""
    return np.array(sorted(hop_distances(g, z, k)), dtype=np.int64)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Symmetric normalisation D^{-1/2} A D^{-1/2} sharing the graph's CSR."""

    graph: Graph
    weights: np.ndarray

    def row(self, z):
        lo, hi = self.graph.row_offsets[z], self.graph.row_offsets[z + 1]
        return self.graph.col_indices[lo:hi], self.weights[lo:hi]

    @cached_property
    def row_norms(self):
        g = self.graph
        rows = np.repeat(np.arange(g.num_nodes), g.degrees)
        return np.sqrt(np.bincount(rows, self.weights ** 2, minlength=g.num_nodes))

    def to_scipy(self):
        g = self.graph
        return sp.csr_matrix((self.weights, g.col_indices, g.row_offsets),
                             shape=(g.num_nodes, g.num_nodes))

    def dense_power(self, k):
        """Exact dense Ã^k; only sensible for small graphs."""
        a = self.to_scipy().toarray()
        return np.linalg.matrix_power(a, k)


def normalized_adjacency(g: Graph) -> NormalizedAdjacency:
    deg = g.degrees.astype(np.float64)
    rows = np.repeat(np.arange(g.num_nodes), g.degrees)
    w = 1.0 / np.sqrt(deg[rows] * deg[g.col_indices])
    return NormalizedAdjacency(g, _frozen(w, np.float64))


# ---------------------------------------------------------------- file I/O

def load_graph(edge_list_path, num_nodes: int) -> Graph:
    """Read a whitespace separated ``u v`` edge list (``#`` starts a comment line)."""
    edges = []
    with open(edge_list_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 2:
                raise DataError(f"{edge_list_path}:{lineno}: expected 'u v', got {s!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{edge_list_path}:{lineno}: non-integer node id in {s!r}") from None
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise DataError(f"{edge_list_path}:{lineno}: node id out of range [0, {num_nodes})")
            edges.append((u, v))
    if not edges:
        raise DataError(f"{edge_list_path}: no edges found")
    return Graph.from_edges(num_nodes, edges)


def save_graph_cache(g: Graph, path) -> None:
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<QQ", g.num_nodes, g.col_indices.size))
        fh.write(g.row_offsets.astype(_U64).tobytes())
        fh.write(g.col_indices.astype(_U64).tobytes())


def load_graph_cache(path) -> Graph:
    buf = Path(path).read_bytes()
    if buf[:4] != GRAPH_MAGIC:
        raise DataError(f"{path}: bad magic, expected {GRAPH_MAGIC!r}")
    if len(buf) < 20:
        raise DataError(f"{path}: truncated header")
    n, arcs = struct.unpack_from("<QQ", buf, 4)
    expected = 20 + 8 * (n + 1 + arcs)
    if len(buf) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(buf)}")
    ro = np.frombuffer(buf, _U64, n + 1, 20).astype(np.int64)
    ci = np.frombuffer(buf, _U64, arcs, 20 + 8 * (n + 1)).astype(np.int64)
    return Graph(int(n), ro, ci)


def read_graph(path, num_nodes=None) -> Graph:
    """Load either a binary graph cache or a text edge list."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == GRAPH_MAGIC:
        g = load_graph_cache(path)
        if num_nodes is not None and g.num_nodes != num_nodes:
            raise DataError(f"{path}: graph has {g.num_nodes} nodes, expected {num_nodes}")
        return g
    if num_nodes is None:
        raise DataError("num_nodes is required for text edge lists")
    return load_graph(path, num_nodes)


def check_matrix(a, name="matrix") -> np.ndarray:
    """Return ``a`` as a 2-d float64 array, rejecting non-finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DataError(f"{name} must be 2-dimensional, got shape {a.shape}")
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{name} has non-finite entry at ({r}, {c})")
    return a


def save_matrix(a, path) -> None:
    a = check_matrix(a)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", *a.shape))
        fh.write(np.ascontiguousarray(a, dtype=_F64).tobytes())


def load_matrix(path) -> np.ndarray:
    """Load an ``SDM1`` matrix; errors on bad magic, size mismatch or NaN/inf."""
    buf = Path(path).read_bytes()
    if buf[:4] != MATRIX_MAGIC:
        raise DataError(f"{path}: bad magic, expected {MATRIX_MAGIC!r}")
    if len(buf) < 20:
        raise DataError(f"{path}: truncated header")
    rows, dim = struct.unpack_from("<QQ", buf, 4)
    payload = len(buf) - 20
    if payload != 8 * rows * dim:
        raise DataError(f"{path}: header says {rows}x{dim} values but payload has {payload} bytes")
    a = np.frombuffer(buf, _F64, rows * dim, 20).astype(np.float64).reshape(rows, dim)
    return check_matrix(a, name=str(path))
