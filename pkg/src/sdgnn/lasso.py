"""Nonnegative Lasso for a single node's sparse weight vector.

The problem solved is::

    minimize_theta  0.5 * ||theta @ design - target||^2 + lambda1 * sum(theta)
    subject to      theta >= 0

where row ``i`` of ``design`` is the transformed feature vector of the
``i``-th candidate.  :func:`solve_lars` follows the positive Lasso path of
Least Angle Regression and can stop early once ``max_active`` variables are
in the model.  :func:`solve_oracle` is an independent projected coordinate
descent used to verify it.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    target: np.ndarray
    lambda1: float = 0.0
    max_active: int = 1 << 30

    def __post_init__(self):
        design = np.atleast_2d(np.asarray(self.design, dtype=np.float64))
        target = np.asarray(self.target, dtype=np.float64).reshape(-1)
        if design.shape[1] != target.size:
            raise DataError(f"design has {design.shape[1]} columns, target has {target.size}")
        if not (np.isfinite(design).all() and np.isfinite(target).all()):
            raise DataError("non-finite design or target")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be >= 0")
        if self.max_active < 1:
            raise ValueError("max_active must be >= 1")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)

    @property
    def num_candidates(self):
        return self.design.shape[0]

    def gram(self):
        return self.design @ self.design.T, self.design @ self.target

    def objective(self, theta):
        """Objective value at a dense coefficient vector ``theta``."""
        r = theta @ self.design - self.target
        return 0.5 * float(r @ r) + self.lambda1 * float(np.sum(theta))


@dataclass(frozen=True)
class SparseSolution:
    """Nonzero coefficients of a solution, indexed by candidate position."""

    indices: np.ndarray
    weights: np.ndarray
    objective: float
    n_iter: int = 0
    used_fallback: bool = False
    stop_reason: str = "lambda"
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.weights.tolist()))

    @property
    def nnz(self):
        return self.indices.size

    def dense(self, size):
        theta = np.zeros(size)
        theta[self.indices] = self.weights
        return theta


def _solution(problem, theta, **kw):
    idx = np.flatnonzero(theta > 0)
    return SparseSolution(idx.astype(np.int64), theta[idx].copy(),
                          problem.objective(theta), **kw)


def _equiangular(gram_aa):
    """Solve ``gram_aa @ u = 1``; jitter the diagonal if it is not positive definite."""
    ones = np.ones(gram_aa.shape[0])
    try:
        return linalg.cho_solve(linalg.cho_factor(gram_aa), ones)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(gram_aa)
        try:
            return linalg.cho_solve(linalg.cho_factor(gram_aa + jitter * np.eye(len(ones))), ones)
        except linalg.LinAlgError:
            return np.full_like(ones, np.nan)


def solve_lars(p: LassoProblem) -> SparseSolution:
    """Positive Lasso via LARS with the Lasso (drop) modification.

    Stops when the largest correlation falls to ``lambda1`` or when a new
    variable would enter an active set already holding ``max_active``
    variables.  In the latter case the coefficients are those of the path at
    the point where that variable would have entered.  Ties between candidates
    resolve to the lowest index.  If the path becomes numerically degenerate
    the problem is handed to :func:`solve_oracle` and ``used_fallback`` is set.
    """
    n_cand = p.num_candidates
    gram, xty = p.gram()
    lam = float(p.lambda1)
    theta = np.zeros(n_cand)
    if n_cand == 0:
        return _solution(p, theta)

    corr = xty.copy()
    j = int(np.argmax(corr))
    level = float(corr[j])  # common correlation of the active set
    tol = 1e-12 * max(level, 1.0)
    if level <= lam + tol:
        return _solution(p, theta)

    active = [j]
    entered = [j]
    barred = set()  # dropped since the path last moved; may not re-enter yet
    reason = "lambda"
    n_iter = 0
    max_iter = 8 * n_cand + 100
    while True:
        n_iter += 1
        if n_iter > max_iter:
            return _fallback(p, "iteration limit")
        act = np.array(active)
        u = _equiangular(gram[np.ix_(act, act)])
        if not np.all(np.isfinite(u)):
            return _fallback(p, "singular active Gram")
        slope = gram[:, act] @ u  # rate at which each correlation decreases

        gamma_lam = level - lam

        gamma_in, j_in = np.inf, -1
        inactive = np.ones(n_cand, bool)
        inactive[act] = False
        if barred:
            inactive[list(barred)] = False
        denom = 1.0 - slope
        steps = np.full(n_cand, np.inf)
        ok = inactive & (denom > 1e-12)
        # a variable already level with the active set (a near tie) enters at once
        steps[ok] = np.maximum((level - corr[ok]) / denom[ok], 0.0)
        if ok.any():
            j_in = int(np.argmin(steps))
            gamma_in = steps[j_in]

        gamma_out, k_out = np.inf, -1
        neg = u < 0
        if neg.any():
            steps = np.full(u.size, np.inf)
            steps[neg] = -theta[act][neg] / u[neg]
            k_out = int(np.argmin(steps))
            gamma_out = max(steps[k_out], 0.0)

        tie = 1e-10 * max(gamma_lam, tol)
        if gamma_lam <= min(gamma_in, gamma_out) + tie:
            event, gamma = "lambda", gamma_lam
        elif gamma_out <= gamma_in:
            event, gamma = "drop", gamma_out
        else:
            event, gamma = "enter", gamma_in

        theta[act] += gamma * u
        level -= gamma
        corr = xty - gram @ theta
        if not (np.all(np.isfinite(theta)) and np.isfinite(level)):
            return _fallback(p, "non-finite path")

        if event == "lambda":
            break
        if gamma > tol:
            barred.clear()
        if event == "drop":
            dropped = active.pop(k_out)
            theta[dropped] = 0.0
            barred.add(dropped)
            if not active:
                # Path restarts from zero; only possible through round-off.
                j = int(np.argmax(corr))
                level = float(corr[j])
                if level <= lam + tol:
                    break
                active = [j]
                entered.append(j)
            continue
        if len(active) >= p.max_active:
            reason = "max_active"
            break
        active.append(j_in)
        entered.append(j_in)

    theta[theta < 0] = 0.0
    theta = _polish(p, gram, xty, theta, lam if reason == "lambda" else level)
    return _solution(p, theta, n_iter=n_iter, stop_reason=reason, extra={"entered": entered})


def _polish(p, gram, xty, theta, level):
    """Re-solve the stationarity equations on the support to remove path drift."""
    act = np.flatnonzero(theta > 0)
    if act.size == 0:
        return theta
    try:
        with warnings.catch_warnings():
            # an ill-conditioned support is fine here: the result is only kept if it helps
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            sol = linalg.solve(gram[np.ix_(act, act)], xty[act] - level, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return theta
    if not (np.all(np.isfinite(sol)) and np.all(sol > 0)):
        return theta
    cand = np.zeros_like(theta)
    cand[act] = sol
    return cand if p.objective(cand) <= p.objective(theta) else theta


def _fallback(p, why):
    log.warning("LARS fell back to coordinate descent: %s", why)
    s = solve_oracle(p)
    return SparseSolution(s.indices, s.weights, s.objective, s.n_iter,
                          used_fallback=True, stop_reason=s.stop_reason)


# ------------------------------------------------------------------ oracle

def _cd(gram, xty, lam, theta, const, grad_tol=1e-10, obj_tol=1e-12, max_sweeps=200_000):
    """Projected cyclic coordinate descent on the Gram form of the objective.

    ``const`` is ``0.5 * ||target||^2`` so that objective changes can be
    judged relative to the true objective value rather than an offset one.
    """
    diag = np.diag(gram).copy()
    corr = xty - gram @ theta
    usable = np.flatnonzero(diag > 0)

    def obj():
        return const + 0.5 * float(theta @ (gram @ theta)) - float(xty @ theta) + lam * float(theta.sum())

    def kkt():
        v = corr - lam
        viol = np.where(theta > 0, np.abs(v), np.maximum(v, 0.0))
        return float(viol[usable].max()) if usable.size else 0.0

    f_prev = obj()
    floor = 1e-12 * max(abs(f_prev), 1e-300)
    full = True
    for sweep in range(max_sweeps):
        coords = usable if full else usable[theta[usable] > 0]
        for j in coords:
            new = theta[j] + (corr[j] - lam) / diag[j]
            if new < 0.0:
                new = 0.0
            delta = new - theta[j]
            if delta != 0.0:
                theta[j] = new
                corr -= gram[:, j] * delta
        f = obj()
        small = abs(f_prev - f) < obj_tol * max(abs(f), floor)
        f_prev = f
        if full:
            if kkt() <= grad_tol or small:
                break
            full = False
        elif small or kkt() <= grad_tol:
            full = True  # converged on the support, re-check everything
    return theta, sweep + 1


def _restricted(p, gram, xty, support):
    theta = np.zeros(p.num_candidates)
    if len(support):
        s = np.asarray(support)
        sub, _ = _cd(gram[np.ix_(s, s)], xty[s], p.lambda1, np.zeros(s.size),
                     0.5 * float(p.target @ p.target))
        sub = _polish_sub(gram[np.ix_(s, s)], xty[s], p.lambda1, sub)
        theta[s] = sub
    return theta


def _polish_sub(gram, xty, lam, theta):
    act = np.flatnonzero(theta > 0)
    if act.size == 0:
        return theta
    sol, *_ = np.linalg.lstsq(gram[np.ix_(act, act)], xty[act] - lam, rcond=None)
    if not np.all(sol > 0):
        return theta
    cand = np.zeros_like(theta)
    cand[act] = sol

    def f(t):
        return 0.5 * t @ gram @ t - xty @ t + lam * t.sum()
    return cand if f(cand) <= f(theta) else theta


def solve_oracle(p: LassoProblem) -> SparseSolution:
    """Reference solver: projected coordinate descent, then support refinement.

    When the unconstrained-cardinality solution has more than ``max_active``
    nonzeros, a support of size ``max_active`` is chosen by greedy forward
    selection and the problem is re-solved restricted to it.
    """
    gram, xty = p.gram()
    theta, sweeps = _cd(gram, xty, p.lambda1, np.zeros(p.num_candidates),
                        0.5 * float(p.target @ p.target))
    theta = _polish_sub(gram, xty, p.lambda1, theta)
    reason = "converged"
    if np.count_nonzero(theta) > p.max_active:
        reason = "max_active"
        support = []
        for _ in range(p.max_active):
            best = None
            for j in range(p.num_candidates):
                if j in support:
                    continue
                t = _restricted(p, gram, xty, support + [j])
                f = p.objective(t)
                if best is None or f < best[0]:
                    best = (f, j)
            support.append(best[1])
        theta = _restricted(p, gram, xty, sorted(support))
    return _solution(p, theta, n_iter=sweeps, stop_reason=reason)


def kkt_residual(p: LassoProblem, s: SparseSolution) -> float:
    """Largest violation of the optimality conditions at ``s``.

    Active coordinates must have correlation exactly ``lambda1``; inactive
    ones at most ``lambda1``.
    """
    if p.num_candidates == 0:
        return 0.0
    theta = s.dense(p.num_candidates)
    corr = p.design @ (p.target - theta @ p.design)
    v = corr - p.lambda1
    viol = np.maximum(v, 0.0)
    viol[s.indices] = np.abs(v[s.indices])
    return float(viol.max())
