"""Per-node candidate sets restricting where a sparse weight vector may be nonzero.

A candidate set is the full ``k1``-hop ball around the centre node plus the
nodes reached by recursively sampling ``fanouts[h]`` neighbours (uniformly,
without replacement) for ``k2`` extra hops, starting from every node of the
``k1``-ball.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph_store import Graph, hop_distances

log = logging.getLogger(__name__)

CANDIDATE_MAGIC = b"SDC1"


@dataclass(frozen=True)
class CandidateConfig:
    k1: int = 1
    k2: int = 0
    fanouts: tuple[int, ...] = ()
    include_self: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1 and k2 must be nonnegative")
        if len(self.fanouts) != self.k2:
            raise ValueError(f"need {self.k2} fanouts, got {len(self.fanouts)}")
        if any(f < 1 for f in self.fanouts):
            raise ValueError("fanouts must be >= 1")


@dataclass(frozen=True)
class CandidateSet:
    center: int
    members: np.ndarray = field(repr=False)

    def __len__(self):
        return self.members.size

    def __contains__(self, node):
        i = np.searchsorted(self.members, node)
        return i < self.members.size and self.members[i] == node


def _hop_rng(seed, z, hop):
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, z, hop])


def build_candidates(g: Graph, z: int, cfg: CandidateConfig) -> CandidateSet:
    if not 0 <= z < g.num_nodes:
        raise IndexError(f"node {z} out of range")
    visited = set(hop_distances(g, z, cfg.k1))
    frontier = sorted(visited)
    for hop, fanout in enumerate(cfg.fanouts, start=1):
        rng = _hop_rng(cfg.rng_seed, z, hop)
        sampled = set()
        for v in frontier:
            nbrs = g.neighbors(v)
            if nbrs.size <= fanout:
                sampled.update(nbrs.tolist())
            else:
                sampled.update(rng.choice(nbrs, size=fanout, replace=False).tolist())
        visited |= sampled
        frontier = sorted(sampled)
    if not cfg.include_self:
        visited.discard(z)
    if not visited:
        raise DataError(f"empty candidate set for node {z}")
    return CandidateSet(z, np.array(sorted(visited), dtype=np.int64))


def build_all(g: Graph, cfg: CandidateConfig) -> list[CandidateSet]:
    sets = [build_candidates(g, z, cfg) for z in range(g.num_nodes)]
    total = sum(len(c) for c in sets)
    log.info("built %d candidate sets, %d members total (%.1f KiB)",
             len(sets), total, total * 8 / 1024)
    return sets


def candidate_memory_bytes(sets) -> int:
    """Bytes held by the member arrays of ``sets``."""
    return sum(c.members.nbytes for c in sets)


def save_candidates(sets, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CANDIDATE_MAGIC)
        fh.write(struct.pack("<Q", len(sets)))
        for c in sets:
            fh.write(struct.pack("<Q", len(c)))
            fh.write(c.members.astype("<u8").tobytes())


def load_candidates(path) -> list[CandidateSet]:
    buf = Path(path).read_bytes()
    if buf[:4] != CANDIDATE_MAGIC:
        raise DataError(f"{path}: bad magic, expected {CANDIDATE_MAGIC!r}")
    try:
        (n,) = struct.unpack_from("<Q", buf, 4)
        off, sets = 12, []
        for z in range(n):
            (k,) = struct.unpack_from("<Q", buf, off)
            off += 8
            if off + 8 * k > len(buf):
                raise DataError(f"{path}: truncated at node {z}")
            members = np.frombuffer(buf, "<u8", k, off).astype(np.int64)
            off += 8 * k
            sets.append(CandidateSet(z, members))
    except struct.error:
        raise DataError(f"{path}: truncated") from None
    if off != len(buf):
        raise DataError(f"{path}: {len(buf) - off} trailing bytes")
    return sets
