"""Row-wise feature transformation: a small MLP with hand-written backprop.

Weights are stored ``(fan_in, fan_out)`` so a batch of feature rows ``A``
maps to ``act(A @ W + b)``.  The forward contraction uses a fixed summation
order (``einsum`` without BLAS) so that a row's output does not depend on
which other rows share its batch; serving a single node therefore reproduces
training-time values bit for bit.

Checkpoint layout (u64/f64 little endian)::

    b"SDW1" | layers | per layer: rows | cols | weights (rows*cols) | biases (cols)
            | activation tag (u64: 0 identity, 1 relu, 2 tanh)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericalError

WEIGHTS_MAGIC = b"SDW1"
_ACT_TAGS = {"identity": 0, "relu": 1, "tanh": 2}
_TAG_ACTS = {v: k for k, v in _ACT_TAGS.items()}


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _matmul(a, w):
    return np.einsum("nd,dh->nh", a, w)


@dataclass(frozen=True)
class TransformParams:
    """MLP parameters; ``activation`` applies to hidden layers only."""

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if not ws or len(ws) != len(bs):
            raise DataError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.size != w.shape[1]:
                raise DataError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise DataError(f"layer {i}: input dim {w.shape[0]} != {ws[i - 1].shape[1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NumericalError(f"layer {i}: non-finite parameters")
        if self.activation not in _ACT_TAGS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for a in ws + bs:
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, layer_dims: Sequence[int], activation="relu", seed=0):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(tuple(ws), tuple(bs), activation)

    @classmethod
    def identity(cls, dim):
        """Single linear layer computing ``x -> x``."""
        return cls((np.eye(dim),), (np.zeros(dim),), "identity")

    @classmethod
    def linear(cls, weight, bias=None):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.zeros(weight.shape[1]) if bias is None else bias
        return cls((weight,), (bias,), "identity")

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def from_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        ws, bs, off = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[off:off + w.size].reshape(w.shape))
            off += w.size
            bs.append(vec[off:off + b.size])
            off += b.size
        return TransformParams(tuple(ws), tuple(bs), self.activation)

    def weight_sq_norm(self):
        return float(sum(np.sum(w * w) for w in self.weights))


@dataclass(frozen=True)
class GradientBundle:
    weights: tuple
    biases: tuple
    loss: float

    def flat(self):
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def is_finite(self):
        return np.isfinite(self.loss) and all(np.isfinite(g).all() for g in self.weights + self.biases)


def _forward_cached(params, a):
    cache = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = _matmul(a, w) + b
        out = z if i == last else _act(params.activation, z)
        cache.append((a, z, out))
        a = out
    return a, cache


def _backward(params, cache, grad_out):
    """Parameter gradients given d(loss)/d(output) for a cached forward pass."""
    gws, gbs = [None] * len(cache), [None] * len(cache)
    g = grad_out
    last = len(cache) - 1
    for i in range(last, -1, -1):
        a_in, z, out = cache[i]
        if i != last:
            g = g * _act_grad(params.activation, z, out)
        gws[i] = a_in.T @ g
        gbs[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return gws, gbs


def forward_matrix(params: TransformParams, a) -> np.ndarray:
    """Apply the MLP to every row of ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.in_dim:
        raise DataError(f"expected rows of length {params.in_dim}, got shape {a.shape}")
    return _forward_cached(params, a)[0]


def forward(params: TransformParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("forward expects a single feature vector")
    return forward_matrix(params, x[None, :])[0]


def forward_batch(params: TransformParams, X, rows) -> np.ndarray:
    """Transform the feature rows ``X[rows]``; ``X`` is indexed exactly once."""
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    if rows.size == 0:
        return np.zeros((0, params.out_dim))
    return forward_matrix(params, X[rows])


def _pack_batch(batch):
    """Turn ``(ids, weights, target)`` items into a sparse mixing matrix.

    Returns the union of referenced rows, a dense ``(len(batch), len(union))``
    weight matrix over that union and the stacked targets.
    """
    ids = [np.asarray(i, dtype=np.int64).reshape(-1) for i, _, _ in batch]
    union = np.unique(np.concatenate(ids)) if ids else np.zeros(0, np.int64)
    mix = np.zeros((len(batch), union.size))
    for r, (item_ids, (_, w, _)) in enumerate(zip(ids, batch)):
        np.add.at(mix[r], np.searchsorted(union, item_ids), np.asarray(w, dtype=np.float64))
    targets = np.array([np.asarray(t, dtype=np.float64).reshape(-1) for _, _, t in batch])
    return union, mix, targets


def data_loss_grad(params: TransformParams, batch, X):
    """Data term ``0.5 * sum ||theta_z^T phi(X) - omega_z||^2`` and its gradients.

    Only rows that appear in some item's support are transformed.
    """
    if not batch:
        zeros_w = tuple(np.zeros_like(w) for w in params.weights)
        zeros_b = tuple(np.zeros_like(b) for b in params.biases)
        return 0.0, zeros_w, zeros_b
    union, mix, targets = _pack_batch(batch)
    if union.size:
        phi, cache = _forward_cached(params, X[union])
        pred = mix @ phi
    else:
        pred = np.zeros((len(batch), params.out_dim))
    resid = pred - targets
    with np.errstate(over="ignore"):  # an infinite loss is reported by apply_gradient
        loss = 0.5 * float(np.sum(resid * resid))
    if not union.size:
        zeros_w = tuple(np.zeros_like(w) for w in params.weights)
        zeros_b = tuple(np.zeros_like(b) for b in params.biases)
        return loss, zeros_w, zeros_b
    gws, gbs = _backward(params, cache, mix.T @ resid)
    return loss, tuple(gws), tuple(gbs)


def with_l2(params, loss, gws, gbs, lambda2) -> GradientBundle:
    """Add ``lambda2 * ||W||_F^2`` over weight matrices (biases unpenalised)."""
    loss = loss + lambda2 * params.weight_sq_norm()
    gws = tuple(g + 2.0 * lambda2 * w for g, w in zip(gws, params.weights))
    return GradientBundle(gws, tuple(gbs), loss)


def phase_phi_loss_grad(params: TransformParams, batch, X, lambda2: float) -> GradientBundle:
    """Mini-batch loss for the transform with the sparse weights held fixed.

    ``batch`` is a sequence of ``(support_ids, weights, target)`` triples where
    ``support_ids`` are global node ids (rows of ``X``).
    """
    loss, gws, gbs = data_loss_grad(params, batch, X)
    return with_l2(params, loss, gws, gbs, lambda2)


def apply_gradient(params: TransformParams, grads: GradientBundle, lr: float) -> TransformParams:
    if not grads.is_finite():
        raise NumericalError("non-finite gradient; step aborted")
    ws = tuple(w - lr * g for w, g in zip(params.weights, grads.weights))
    bs = tuple(b - lr * g for b, g in zip(params.biases, grads.biases))
    return TransformParams(ws, bs, params.activation)


def gd_step(params: TransformParams, grad_fn: Callable[[TransformParams], GradientBundle],
            lr: float, steps: int = 1) -> TransformParams:
    """Plain gradient descent, recomputing ``grad_fn(params)`` before each step."""
    if lr < 0:
        raise ValueError("lr must be >= 0")
    for _ in range(steps):
        params = apply_gradient(params, grad_fn(params), lr)
    return params


# ------------------------------------------------------------ checkpoints

def encode_params(params: TransformParams) -> bytes:
    out = [WEIGHTS_MAGIC, struct.pack("<Q", len(params.weights))]
    for w, b in zip(params.weights, params.biases):
        out.append(struct.pack("<QQ", *w.shape))
        out.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    out.append(struct.pack("<Q", _ACT_TAGS[params.activation]))
    return b"".join(out)


def decode_params(buf: bytes, offset=0, source="<bytes>"):
    """Parse an ``SDW1`` blob starting at ``offset``; returns (params, end offset)."""
    if buf[offset:offset + 4] != WEIGHTS_MAGIC:
        raise DataError(f"{source}: bad magic, expected {WEIGHTS_MAGIC!r}")
    try:
        off = offset + 4
        (layers,) = struct.unpack_from("<Q", buf, off)
        off += 8
        ws, bs = [], []
        for _ in range(layers):
            rows, cols = struct.unpack_from("<QQ", buf, off)
            off += 16
            if off + 8 * (rows * cols + cols) > len(buf):
                raise DataError(f"{source}: truncated layer")
            ws.append(np.frombuffer(buf, "<f8", rows * cols, off).reshape(rows, cols).astype(np.float64))
            off += 8 * rows * cols
            bs.append(np.frombuffer(buf, "<f8", cols, off).astype(np.float64))
            off += 8 * cols
        (tag,) = struct.unpack_from("<Q", buf, off)
        off += 8
    except struct.error:
        raise DataError(f"{source}: truncated") from None
    if tag not in _TAG_ACTS:
        raise DataError(f"{source}: unknown activation tag {tag}")
    return TransformParams(tuple(ws), tuple(bs), _TAG_ACTS[tag]), off


def save_params(params: TransformParams, path) -> None:
    Path(path).write_bytes(encode_params(params))


def load_params(path) -> TransformParams:
    buf = Path(path).read_bytes()
    params, end = decode_params(buf, 0, str(path))
    if end != len(buf):
        raise DataError(f"{path}: {len(buf) - end} trailing bytes")
    return params
