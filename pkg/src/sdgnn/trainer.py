"""Alternating optimisation of sparse node weights and the feature transform.

Each outer iteration takes the next mini-batch of training nodes, re-solves
every node's nonnegative Lasso over its candidate set with the transform
frozen, then takes a few gradient steps on the transform with the weights
frozen.  After the loop the transform is fixed and every node's weights are
solved once more.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .candidates import CandidateConfig, build_all
from .errors import DataError, NumericalError, TrainingAborted
from .graph_store import Graph, check_matrix, normalized_adjacency
from .lasso import LassoProblem, solve_lars
from .sampler import WalkConfig, build_theta0, warm_up_phi
from .store import SparseWeightStore
from .transform import (TransformParams, data_loss_grad, forward_batch,
                        forward_matrix, gd_step, with_l2)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """Linear decay of the active-set cap: ``start - by * (t // every)``, floored."""

    start: int
    every: int
    by: int
    floor: int = 1

    def __post_init__(self):
        if self.floor < 1 or self.every < 1 or self.by < 0 or self.start < 1:
            raise ValueError("invalid schedule")

    def at(self, t):
        return max(self.floor, self.start - self.by * (t // self.every))


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1e-3
    lambda2: float = 1e-5
    max_active: int = 32
    batch_size: int = 64
    outer_iters: int = 50
    phi_steps: int = 5
    lr: float = 1e-3
    candidate_cfg: CandidateConfig = field(default_factory=CandidateConfig)
    train_subset_fraction: float = 1.0
    schedule: Schedule | None = None
    seed: int = 0
    hidden_dims: tuple | None = None  # None: one hidden layer as wide as the output
    activation: str = "relu"
    warmup_hops: int = 0
    warmup_steps: int = 0
    warmup_budgets: tuple | None = None
    warmup_lr: float | None = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.max_active < 1 or self.batch_size < 1 or self.outer_iters < 0 or self.phi_steps < 0:
            raise ValueError("max_active and batch_size must be >= 1; outer_iters, phi_steps >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 < self.train_subset_fraction <= 1.0:
            raise ValueError("train_subset_fraction must lie in (0, 1]")
        if self.warmup_steps and self.warmup_hops < 1:
            raise ValueError("warm-up needs warmup_hops >= 1")

    def effective_max_active(self, t):
        return self.max_active if self.schedule is None else self.schedule.at(t)


@dataclass
class FitReport:
    objectives: list = field(default_factory=list)
    mean_nnz: list = field(default_factory=list)
    theta_ms: list = field(default_factory=list)
    phi_ms: list = field(default_factory=list)
    final_objective: float = math.nan
    final_mean_nnz: float = math.nan
    final_std_nnz: float = math.nan
    finalize_ms: float = 0.0
    worst_theta_increase: float = -math.inf  # largest relative rise of a raw solve over the previous vector
    n_theta_solves: int = 0
    n_kept_previous: int = 0
    n_fallbacks: int = 0

    def lines(self):
        for t, (obj, nnz, a, b) in enumerate(zip(self.objectives, self.mean_nnz,
                                                 self.theta_ms, self.phi_ms), start=1):
            yield f"iter={t} obj={obj:.10g} mean_nnz={nnz:.4g} phase_theta_ms={a:.3f} phase_phi_ms={b:.3f}"

    def summary(self):
        return (f"final obj={self.final_objective:.10g} mean_nnz={self.final_mean_nnz:.4g} "
                f"std_nnz={self.final_std_nnz:.4g} finalize_ms={self.finalize_ms:.3f}")


# ------------------------------------------------------------- evaluation

def reconstruct(params: TransformParams, store: SparseWeightStore, X, nodes=None) -> np.ndarray:
    """Rows ``theta_z^T phi(X)`` for ``nodes`` (all nodes by default)."""
    nodes = np.arange(store.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    out = np.zeros((nodes.size, params.out_dim))
    sup = [store.ids[z] for z in nodes if store.ids[z] is not None and store.ids[z].size]
    if not sup:
        return out
    union = np.unique(np.concatenate(sup))
    phi = forward_batch(params, X, union)
    for r, z in enumerate(nodes.tolist()):
        ids = store.ids[z]
        if ids is not None and ids.size:
            out[r] = store.weights[z] @ phi[np.searchsorted(union, ids)]
    return out


def objective_multi(snapshots, params, store, lambda1, lambda2, nodes=None) -> float:
    """Objective summed over ``(features, targets)`` snapshots, optionally over ``nodes`` only.

    The data term is summed across snapshots; the L1 and L2 penalties are
    counted once since the weights and the transform are shared.
    """
    nodes = np.arange(store.num_nodes) if nodes is None else np.asarray(nodes)
    data = 0.0
    for X, omega in snapshots:
        r = reconstruct(params, store, X, nodes) - omega[nodes]
        data += 0.5 * float(np.sum(r * r))
    return data + lambda1 * store.l1(nodes.tolist()) + lambda2 * params.weight_sq_norm()


def objective(g: Graph, X, omega, params: TransformParams, store: SparseWeightStore,
              lambda1: float, lambda2: float) -> float:
    """Full objective: squared reconstruction error, L1 on weights, L2 on transform weights."""
    if store.num_nodes != g.num_nodes or len(X) != g.num_nodes:
        raise DataError("graph, features and store disagree on node count")
    return objective_multi([(X, omega)], params, store, lambda1, lambda2)


def objective_dense(X, omega, params, store, lambda1, lambda2) -> float:
    """Same value as :func:`objective` via a dense weight matrix; small graphs only."""
    theta = store.to_dense()
    phi = forward_matrix(params, np.asarray(X))
    r = theta.T @ phi - np.asarray(omega)
    return 0.5 * float(np.sum(r * r)) + lambda1 * float(theta.sum()) \
        + lambda2 * params.weight_sq_norm()


def equalize(store: SparseWeightStore, rule: str = "mass") -> SparseWeightStore:
    """Replace each node's nonzero weights by equal values on the same support.

    ``rule="mass"`` keeps the vector's L1 mass (each weight becomes sum/k);
    ``rule="unit"`` uses 1/k.
    """
    if rule not in ("mass", "unit"):
        raise ValueError("rule must be 'mass' or 'unit'")
    out = SparseWeightStore(store.num_nodes, candidates=store.candidates)
    for z in range(store.num_nodes):
        ids, w = store.ids[z], store.weights[z]
        if ids is None:
            continue
        if ids.size:
            level = (w.sum() if rule == "mass" else 1.0) / ids.size
            w = np.full(ids.size, level)
        out.set(z, ids, w)
    return out


# ---------------------------------------------------------------- training

def _check_snapshots(g, snapshots):
    if not snapshots:
        raise DataError("at least one snapshot required")
    snaps = []
    for s, (H, Z) in enumerate(snapshots):
        H = check_matrix(H, f"snapshot {s} features")
        Z = check_matrix(Z, f"snapshot {s} targets")
        if H.shape[0] != g.num_nodes or Z.shape[0] != g.num_nodes:
            raise DataError(f"snapshot {s}: expected {g.num_nodes} rows")
        if snaps and (H.shape[1] != snaps[0][0].shape[1] or Z.shape[1] != snaps[0][1].shape[1]):
            raise DataError(f"snapshot {s}: dimensions differ from snapshot 0")
        snaps.append((H, Z))
    return snaps


class _Batches:
    """Shuffled epochs over the training nodes."""

    def __init__(self, nodes, size, rng):
        self.nodes, self.size, self.rng = nodes, min(size, nodes.size), rng
        self.order, self.pos = rng.permutation(nodes), 0

    def next(self):
        if self.pos >= self.order.size:
            self.order, self.pos = self.rng.permutation(self.nodes), 0
        b = self.order[self.pos:self.pos + self.size]
        self.pos += self.size
        return b


def _solve_nodes(nodes, snaps, params, store, cands, lambda1, cap, report):
    """Phase Θ for ``nodes``; keeps a node's previous vector if it scores better."""
    union = np.unique(np.concatenate([cands[z].members for z in nodes]))
    phis = [forward_batch(params, H, union) for H, _ in snaps]
    for z in nodes.tolist():
        members = cands[z].members
        pos = np.searchsorted(union, members)
        design = np.hstack([phi[pos] for phi in phis])
        target = np.concatenate([Z[z] for _, Z in snaps])
        problem = LassoProblem(design, target, lambda1, cap)
        sol = solve_lars(problem)
        report.n_theta_solves += 1
        report.n_fallbacks += sol.used_fallback
        new_obj = sol.objective
        prev_ids = store.ids[z]
        keep_prev = False
        if prev_ids is not None and prev_ids.size <= cap:
            prev = np.zeros(members.size)
            prev[np.searchsorted(members, prev_ids)] = store.weights[z]
            prev_obj = problem.objective(prev)
            if prev_obj < new_obj:
                keep_prev = True
                report.n_kept_previous += 1
            rise = (new_obj - prev_obj) / max(abs(prev_obj), 1e-300)
            report.worst_theta_increase = max(report.worst_theta_increase, rise)
        if not keep_prev:
            store.set(z, members[sol.indices], sol.weights)


def _phi_grad_fn(snaps, store, batch, lambda2):
    def grad_fn(p):
        total, gws, gbs = 0.0, None, None
        for H, Z in snaps:
            items = [(store.ids[z], store.weights[z], Z[z]) for z in batch]
            loss, w_, b_ = data_loss_grad(p, items, H)
            total += loss
            gws = w_ if gws is None else tuple(a + c for a, c in zip(gws, w_))
            gbs = b_ if gbs is None else tuple(a + c for a, c in zip(gbs, b_))
        return with_l2(p, total, gws, gbs, lambda2)
    return grad_fn


def fit_multi(g: Graph, snapshots, cfg: TrainConfig, init_params: TransformParams | None = None,
              candidates=None):
    """Train one shared set of sparse weights and one transform over several snapshots.

    ``snapshots`` is a list of ``(features, targets)`` pairs.  For each node the
    Lasso design stacks the transformed candidate features of all snapshots
    side by side, so a single weight vector must explain every snapshot.

    Returns ``(params, store, report)``.
    """
    snaps = _check_snapshots(g, snapshots)
    n = g.num_nodes
    in_dim, out_dim = snaps[0][0].shape[1], snaps[0][1].shape[1]
    rng = np.random.default_rng(cfg.seed)

    if init_params is None:
        hidden = (out_dim,) if cfg.hidden_dims is None else tuple(cfg.hidden_dims)
        params = TransformParams.init([in_dim, *hidden, out_dim], cfg.activation, seed=cfg.seed)
    else:
        params = init_params
    if params.in_dim != in_dim or params.out_dim != out_dim:
        raise DataError(f"transform maps {params.in_dim}->{params.out_dim}, data needs {in_dim}->{out_dim}")

    cands = candidates if candidates is not None else build_all(g, cfg.candidate_cfg)
    if len(cands) != n:
        raise DataError("need one candidate set per node")

    if cfg.warmup_steps:
        budgets = cfg.warmup_budgets or (10,) * cfg.warmup_hops
        walk = WalkConfig(cfg.warmup_hops, budgets, "variance_optimal", cfg.seed)
        theta0 = build_theta0(normalized_adjacency(g), walk, max_active=cfg.max_active)
        lr = cfg.lr if cfg.warmup_lr is None else cfg.warmup_lr
        params = warm_up_phi(params, [H for H, _ in snaps], [Z for _, Z in snaps], theta0,
                             cfg.warmup_steps, lr, cfg.lambda2, cfg.batch_size, cfg.seed)

    if cfg.train_subset_fraction < 1.0:
        k = max(1, math.ceil(cfg.train_subset_fraction * n))
        train_nodes = np.sort(rng.choice(n, size=k, replace=False))
    else:
        train_nodes = np.arange(n)
    batches = _Batches(train_nodes, cfg.batch_size, rng)

    store = SparseWeightStore.zeros(n, cands)
    report = FitReport()
    good = (params, store.copy())

    for t in range(cfg.outer_iters):
        cap = cfg.effective_max_active(t)
        batch = batches.next()
        t0 = time.perf_counter()
        _solve_nodes(batch, snaps, params, store, cands, cfg.lambda1, cap, report)
        t1 = time.perf_counter()
        try:
            params = gd_step(params, _phi_grad_fn(snaps, store, batch, cfg.lambda2),
                             cfg.lr, cfg.phi_steps)
        except NumericalError as exc:
            raise TrainingAborted(f"iteration {t + 1}: {exc}", *good, report) from exc
        t2 = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
            obj = objective_multi(snaps, params, store, cfg.lambda1, cfg.lambda2, train_nodes)
        if not math.isfinite(obj):
            raise TrainingAborted(f"iteration {t + 1}: non-finite objective", *good, report)
        good = (params, store.copy())
        report.objectives.append(obj)
        report.mean_nnz.append(float(store.nnz_array(train_nodes).mean()))
        report.theta_ms.append(1e3 * (t1 - t0))
        report.phi_ms.append(1e3 * (t2 - t1))
        log.debug("iter %d obj %.6g", t + 1, obj)

    t0 = time.perf_counter()
    _solve_nodes(np.arange(n), snaps, params, store, cands, cfg.lambda1,
                 cfg.effective_max_active(cfg.outer_iters), report)
    report.finalize_ms = 1e3 * (time.perf_counter() - t0)
    report.final_objective = objective_multi(snaps, params, store, cfg.lambda1, cfg.lambda2)
    nnz = store.nnz_array()
    report.final_mean_nnz, report.final_std_nnz = float(nnz.mean()), float(nnz.std())
    return params, store, report


def fit(g: Graph, X, omega, cfg: TrainConfig, init_params: TransformParams | None = None,
        candidates=None):
    """Single-snapshot training; see :func:`fit_multi`."""
    return fit_multi(g, [(X, omega)], cfg, init_params, candidates)
