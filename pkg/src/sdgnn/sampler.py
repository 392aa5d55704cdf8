"""Monte-Carlo estimates of rows of powers of the normalised adjacency.

Rows of Ã^K are estimated by forward sampling (each seed node draws a
bootstrap multiset of neighbours, seeds of the next layer are the distinct
draws) followed by backward aggregation of importance-weighted sparse
vectors.  The estimate is unbiased for any strictly positive sampling
distribution over each node's neighbours.

These estimates give the initial sparse weights used to warm up the
feature transformation before alternating training starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .graph_store import NormalizedAdjacency
from .store import SparseWeightStore
from .transform import TransformParams, data_loss_grad, gd_step, with_l2

PROB_MODES = ("proportional_to_weight", "variance_optimal")


@dataclass(frozen=True)
class WalkConfig:
    hops: int
    budgets: tuple
    prob_mode: str = "variance_optimal"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        if self.hops < 1:
            raise ValueError("hops must be >= 1")
        if len(self.budgets) != self.hops or any(b < 1 for b in self.budgets):
            raise ValueError("need one positive budget per hop")
        if self.prob_mode not in PROB_MODES:
            raise ValueError(f"prob_mode must be one of {PROB_MODES}")


def sampling_probs(na: NormalizedAdjacency, z: int, mode: str) -> np.ndarray:
    """Neighbour sampling distribution of ``z`` (aligned with ``neighbors(z)``).

    ``proportional_to_weight`` uses p ∝ Ã_zi; ``variance_optimal`` uses
    p ∝ Ã_zi ||Ã_i*||_2, the single-power surrogate of the variance
    minimising choice.
    """
    nbrs, w = na.row(z)
    if nbrs.size == 0:
        raise DataError(f"node {z} is isolated; no sampling distribution")
    if mode == "proportional_to_weight":
        score = w
    elif mode == "variance_optimal":
        score = w * na.row_norms[nbrs]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return score / score.sum()


def estimate_row(na: NormalizedAdjacency, z: int, cfg: WalkConfig) -> tuple[np.ndarray, np.ndarray]:
    """One unbiased sparse estimate of row ``z`` of Ã^K.

    Returns ``(ids, weights)`` with ids ascending.
    """
    if na.graph.degrees[z] == 0:
        raise DataError(f"node {z} is isolated")
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, z])
    probs = {}
    layers = []
    seeds = [z]
    for budget in cfg.budgets:
        layer, nxt = {}, set()
        for x in seeds:
            if x not in probs:
                probs[x] = sampling_probs(na, x, cfg.prob_mode)
            nbrs, w = na.row(x)
            p = probs[x]
            pick = rng.choice(nbrs.size, size=budget, replace=True, p=p)
            layer[x] = (nbrs[pick].tolist(), (w[pick] / p[pick] / budget).tolist())
            nxt.update(layer[x][0])
        layers.append(layer)
        seeds = sorted(nxt)

    vecs = {i: {i: 1.0} for i in seeds}
    for layer in reversed(layers):
        agg = {}
        for x, (ids, coefs) in layer.items():
            acc = {}
            for i, c in zip(ids, coefs):
                for j, wj in vecs[i].items():
                    acc[j] = acc.get(j, 0.0) + c * wj
            agg[x] = acc
        vecs = agg
    row = vecs[z]
    ids = np.array(sorted(row), dtype=np.int64)
    return ids, np.array([row[i] for i in ids.tolist()])


def build_theta0(na: NormalizedAdjacency, cfg: WalkConfig, nodes=None,
                 max_active=None) -> SparseWeightStore:
    """Initial sparse weights from estimated rows of Ã^K.

    Each row is clamped at zero and, when ``max_active`` is given, cut to its
    largest ``max_active`` weights and rescaled to keep its L1 mass.  Nodes
    not listed in ``nodes`` are left undecomposed; isolated nodes get an
    empty vector.
    """
    n = na.graph.num_nodes
    nodes = range(n) if nodes is None else nodes
    store = SparseWeightStore(n)
    for z in nodes:
        z = int(z)
        if na.graph.degrees[z] == 0:
            store.set(z, [], [])
            continue
        ids, w = estimate_row(na, z, cfg)
        w = np.maximum(w, 0.0)
        keep = w > 0
        ids, w = ids[keep], w[keep]
        if max_active is not None and ids.size > max_active:
            mass = w.sum()
            top = np.lexsort((ids, -w))[:max_active]
            ids, w = ids[top], w[top]
            w = w * (mass / w.sum())
        store.set(z, ids, w)
    return store


def _as_snapshots(X, omega):
    if isinstance(X, (list, tuple)):
        if len(X) != len(omega):
            raise DataError("need one target matrix per feature matrix")
        return list(zip(X, omega))
    return [(X, omega)]


def warm_up_phi(params: TransformParams, X, omega, theta0: SparseWeightStore, steps: int,
                lr: float, lambda2: float, batch_size=None, seed=0) -> TransformParams:
    """Gradient steps on the transform with the sparse weights frozen at ``theta0``.

    ``X`` / ``omega`` may be single matrices or equal-length lists of
    snapshots, in which case the loss is summed over snapshots.  With
    ``batch_size=None`` every step uses all nodes that have a nonempty
    vector in ``theta0``; otherwise batches cycle through shuffled epochs.
    """
    snaps = _as_snapshots(X, omega)
    nodes = np.array([z for z in range(theta0.num_nodes)
                      if theta0.is_decomposed(z) and theta0.nnz(z)], dtype=np.int64)
    if steps <= 0 or nodes.size == 0:
        return params
    rng = np.random.default_rng(seed)
    size = nodes.size if batch_size is None else min(batch_size, nodes.size)
    order, pos = rng.permutation(nodes), 0

    def next_batch():
        nonlocal order, pos
        if pos + size > order.size:
            order, pos = rng.permutation(nodes), 0
        b = order[pos:pos + size]
        pos += size
        return b

    for _ in range(steps):
        batch = next_batch() if batch_size is not None else nodes

        def grad_fn(p, batch=batch):
            total, gws, gbs = 0.0, None, None
            for Xs, Zs in snaps:
                items = [(theta0.ids[z], theta0.weights[z], Zs[z]) for z in batch]
                loss, w_, b_ = data_loss_grad(p, items, Xs)
                total += loss
                gws = w_ if gws is None else tuple(a + c for a, c in zip(gws, w_))
                gbs = b_ if gbs is None else tuple(a + c for a, c in zip(gbs, b_))
            return with_l2(p, total, gws, gbs, lambda2)

        params = gd_step(params, grad_fn, lr, 1)
    return params
