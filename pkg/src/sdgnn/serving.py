"""Online inference: one node's embedding from its sparse weights alone.

Computing node ``z`` reads only the feature rows in the support of
``theta_z``, transforms them and takes the weighted sum, so the cost grows
with ``nnz(theta_z)`` and never with the size of the neighbourhood.  Because
features are read at request time, rows may be replaced between calls.
"""

from __future__ import annotations

import threading
import time
import zlib
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DataError
from .graph_store import Graph, check_matrix, hop_distances
from .store import SparseWeightStore
from .targets import DecoderParams, decoder_predict
from .transform import TransformParams, forward_batch


class FeatureTable:
    """Swappable feature matrix with row-level updates.

    Readers take a copy of the requested rows under a lock, so a concurrent
    update is seen either entirely or not at all.
    """

    def __init__(self, X):
        self._x = check_matrix(X, "features").copy()
        self._lock = threading.Lock()

    @property
    def shape(self):
        return self._x.shape

    def __len__(self):
        return self._x.shape[0]

    def __getitem__(self, rows):
        with self._lock:
            return self._x[rows].copy()

    def update_row(self, i, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self._x.shape[1],) or not np.isfinite(values).all():
            raise DataError(f"row {i}: expected {self._x.shape[1]} finite values")
        with self._lock:
            self._x[i] = values

    def replace(self, X):
        X = check_matrix(X, "features")
        if X.shape != self._x.shape:
            raise DataError(f"replacement has shape {X.shape}, expected {self._x.shape}")
        with self._lock:
            self._x = X.copy()


@dataclass
class ServingBundle:
    params: TransformParams
    store: SparseWeightStore
    features: FeatureTable
    decoder: DecoderParams | None = None

    def __post_init__(self):
        if not isinstance(self.features, FeatureTable):
            self.features = FeatureTable(self.features)
        n, dim = self.features.shape
        if self.store.num_nodes != n:
            raise DataError(f"store has {self.store.num_nodes} nodes, features have {n} rows")
        if self.params.in_dim != dim:
            raise DataError(f"transform expects {self.params.in_dim} features, got {dim}")
        if self.decoder is not None and self.decoder.mlp.in_dim != self.params.out_dim:
            raise DataError("decoder input does not match embedding size")
        for z, ids in enumerate(self.store.ids):
            if ids is not None and ids.size and (ids.min() < 0 or ids.max() >= n):
                raise DataError(f"node {z}: support id out of range")


def infer_embedding(b: ServingBundle, z: int, X_current=None) -> np.ndarray:
    """``sum_i w_i * phi(X_i)`` over the support of ``theta_z``.

    ``X_current`` overrides the bundle's feature table for this call; either
    way exactly ``nnz(theta_z)`` rows are fetched, in one indexed read.
    """
    ids, w = b.store.get(z)
    if ids.size == 0:
        return np.zeros(b.params.out_dim)
    X = b.features if X_current is None else X_current
    return w @ forward_batch(b.params, X, ids)


def infer_predict(b: ServingBundle, z: int, X_current=None) -> tuple[int, np.ndarray]:
    if b.decoder is None:
        raise DataError("no decoder loaded")
    return decoder_predict(b.decoder, infer_embedding(b, z, X_current))


# ---------------------------------------------------------------- bench

@dataclass(frozen=True)
class BenchRecord:
    node: int
    nnz: int
    micros: float
    checksum: int

    def line(self):
        return f"{self.node},{self.nnz},{self.micros:.3f},{self.checksum:08x}"


def bench(b: ServingBundle, nodes, warmup: int = 10, reps: int = 1,
          with_decoder: bool | None = None) -> list[BenchRecord]:
    """Time single-node requests on one thread.

    Each of ``reps`` passes calls every node in ``nodes`` once; ``warmup``
    untimed passes run first.  The decoder is included when the bundle has
    one (or per ``with_decoder``).  The checksum is CRC-32 of the output bytes.
    """
    nodes = [int(z) for z in nodes]
    use_dec = b.decoder is not None if with_decoder is None else with_decoder
    call = (lambda z: infer_predict(b, z)[1]) if use_dec else (lambda z: infer_embedding(b, z))
    clock = time.perf_counter_ns
    raw = []
    with threadpool_limits(limits=1):
        for _ in range(warmup):
            for z in nodes:
                call(z)
        for _ in range(reps):
            for z in nodes:
                t0 = clock()
                out = call(z)
                t1 = clock()
                raw.append((z, t1 - t0, out))
    return [BenchRecord(z, b.store.nnz(z), dt / 1e3, zlib.crc32(np.ascontiguousarray(out).tobytes()))
            for z, dt, out in raw]


def bench_summary(records) -> dict:
    if not records:
        return {"count": 0, "mean_us": float("nan"), "p90_us": float("nan"), "p99_us": float("nan")}
    t = np.array([r.micros for r in records])
    return {"count": t.size, "mean_us": float(t.mean()),
            "p90_us": float(np.percentile(t, 90)), "p99_us": float(np.percentile(t, 99))}


# ------------------------------------------------------ receptive field

@dataclass(frozen=True)
class ReceptiveStats:
    max_hop: int
    mean_nnz: float
    std_nnz: float
    per_hop_mean: tuple  # mean count of support nodes at hop 0..max_hop
    beyond_mean: float  # mean count farther than max_hop (or unreachable)
    mean_ball: float  # mean size of the closed max_hop ball
    ratio: float  # mean in-ball support count over mean ball size

    def lines(self):
        yield f"mean_nnz={self.mean_nnz:.4g} std_nnz={self.std_nnz:.4g}"
        for h, m in enumerate(self.per_hop_mean):
            yield f"hop={h} mean_count={m:.4g}"
        yield f"hop>{self.max_hop} mean_count={self.beyond_mean:.4g}"
        yield f"mean_ball_{self.max_hop}={self.mean_ball:.4g} ratio={self.ratio:.4g}"


def receptive_stats(store: SparseWeightStore, g: Graph, max_hop: int) -> ReceptiveStats:
    """Hop-distance breakdown of each decomposed node's support."""
    if max_hop < 0:
        raise ValueError("max_hop must be >= 0")
    if store.num_nodes != g.num_nodes:
        raise DataError("store and graph disagree on node count")
    nodes = [z for z in range(g.num_nodes) if store.is_decomposed(z)]
    if not nodes:
        raise DataError("no decomposed nodes")
    counts = np.zeros((len(nodes), max_hop + 2))
    balls = np.zeros(len(nodes))
    for r, z in enumerate(nodes):
        dist = hop_distances(g, z, max_hop)
        balls[r] = len(dist)
        for i in store.ids[z].tolist():
            counts[r, dist.get(i, max_hop + 1)] += 1
    nnz = counts.sum(axis=1)
    in_ball = counts[:, :max_hop + 1].sum(axis=1)
    return ReceptiveStats(max_hop, float(nnz.mean()), float(nnz.std()),
                          tuple(float(v) for v in counts[:, :max_hop + 1].mean(axis=0)),
                          float(counts[:, -1].mean()), float(balls.mean()),
                          float(in_ball.mean() / balls.mean()))
