"""Per-node sparse weight vectors over global node ids.

Binary layout (u64 / f64 little endian)::

    b"SDT1" | n | per node: nnz | nnz x (node id, weight), ids ascending

A node whose vector was never computed is written with ``nnz = 2**64 - 1``
and no pairs; an all-zero vector is simply ``nnz = 0``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, NotDecomposedError

STORE_MAGIC = b"SDT1"
_MISSING = 0xFFFFFFFFFFFFFFFF
_PAIR = np.dtype([("id", "<u8"), ("w", "<f8")])


class SparseWeightStore:
    """Sparse, nonnegative weight vector per node.

    ``ids[z]`` / ``weights[z]`` hold the support (ascending global ids) and the
    matching weights of node ``z``; both are ``None`` for nodes that were
    never decomposed.  ``candidates`` optionally keeps the candidate sets the
    supports were drawn from.
    """

    def __init__(self, num_nodes, ids=None, weights=None, candidates=None):
        self.num_nodes = int(num_nodes)
        self.ids = list(ids) if ids is not None else [None] * self.num_nodes
        self.weights = list(weights) if weights is not None else [None] * self.num_nodes
        if len(self.ids) != self.num_nodes or len(self.weights) != self.num_nodes:
            raise DataError("one entry per node required")
        self.candidates = candidates

    @classmethod
    def zeros(cls, num_nodes, candidates=None):
        """Every node decomposed with an all-zero vector."""
        empty_i, empty_w = np.zeros(0, np.int64), np.zeros(0)
        return cls(num_nodes, [empty_i] * num_nodes, [empty_w] * num_nodes, candidates)

    @classmethod
    def identity(cls, num_nodes):
        return cls(num_nodes, [np.array([z], np.int64) for z in range(num_nodes)],
                   [np.ones(1) for _ in range(num_nodes)])

    @classmethod
    def from_dense(cls, theta, tol=0.0):
        """Build from a dense ``(n, n)`` matrix whose column ``z`` is node ``z``'s vector."""
        theta = np.asarray(theta, dtype=np.float64)
        n = theta.shape[1]
        ids, ws = [], []
        for z in range(n):
            col = theta[:, z]
            nz = np.flatnonzero(np.abs(col) > tol)
            ids.append(nz.astype(np.int64))
            ws.append(col[nz].copy())
        return cls(n, ids, ws)

    def __len__(self):
        return self.num_nodes

    def copy(self):
        return SparseWeightStore(self.num_nodes, self.ids, self.weights, self.candidates)

    def is_decomposed(self, z):
        return 0 <= z < self.num_nodes and self.ids[z] is not None

    def get(self, z):
        if not self.is_decomposed(z):
            raise NotDecomposedError(f"node {z} not decomposed")
        return self.ids[z], self.weights[z]

    def set(self, z, ids, weights):
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if ids.size != weights.size:
            raise DataError("ids and weights differ in length")
        order = np.argsort(ids, kind="stable")
        self.ids[z], self.weights[z] = ids[order], weights[order]

    def nnz(self, z):
        return 0 if self.ids[z] is None else self.ids[z].size

    def nnz_array(self, nodes=None):
        nodes = range(self.num_nodes) if nodes is None else nodes
        return np.array([self.nnz(z) for z in nodes], dtype=np.int64)

    def l1(self, nodes=None):
        nodes = range(self.num_nodes) if nodes is None else nodes
        return float(sum(self.weights[z].sum() for z in nodes if self.weights[z] is not None))

    def to_dense(self):
        theta = np.zeros((self.num_nodes, self.num_nodes))
        for z in range(self.num_nodes):
            if self.ids[z] is not None:
                theta[self.ids[z], z] = self.weights[z]
        return theta

    def __eq__(self, other):
        if not isinstance(other, SparseWeightStore) or other.num_nodes != self.num_nodes:
            return NotImplemented
        for a, b, wa, wb in zip(self.ids, other.ids, self.weights, other.weights):
            if (a is None) != (b is None):
                return False
            if a is not None and not (np.array_equal(a, b) and np.array_equal(wa, wb)):
                return False
        return True


def encode_store(store: SparseWeightStore) -> bytes:
    out = [STORE_MAGIC, struct.pack("<Q", store.num_nodes)]
    for ids, ws in zip(store.ids, store.weights):
        if ids is None:
            out.append(struct.pack("<Q", _MISSING))
            continue
        pairs = np.empty(ids.size, dtype=_PAIR)
        pairs["id"], pairs["w"] = ids, ws
        out.append(struct.pack("<Q", ids.size))
        out.append(pairs.tobytes())
    return b"".join(out)


def save_store(store: SparseWeightStore, path) -> None:
    Path(path).write_bytes(encode_store(store))


def load_store(path) -> SparseWeightStore:
    buf = Path(path).read_bytes()
    if buf[:4] != STORE_MAGIC:
        raise DataError(f"{path}: bad magic, expected {STORE_MAGIC!r}")
    try:
        (n,) = struct.unpack_from("<Q", buf, 4)
        off = 12
        ids, ws = [], []
        for z in range(n):
            (k,) = struct.unpack_from("<Q", buf, off)
            off += 8
            if k == _MISSING:
                ids.append(None)
                ws.append(None)
                continue
            if off + 16 * k > len(buf):
                raise DataError(f"{path}: truncated at node {z}")
            pairs = np.frombuffer(buf, _PAIR, k, off)
            off += 16 * k
            node_ids = pairs["id"].astype(np.int64)
            if node_ids.size and (node_ids.max() >= n or np.any(np.diff(node_ids) <= 0)):
                raise DataError(f"{path}: node {z} has out-of-range or unsorted ids")
            ids.append(node_ids)
            ws.append(pairs["w"].astype(np.float64))
    except struct.error:
        raise DataError(f"{path}: truncated") from None
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes")
    return SparseWeightStore(n, ids, ws)
