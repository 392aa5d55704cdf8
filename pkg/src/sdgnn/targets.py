"""Reference embedding generators and the downstream classification decoder.

Targets come from a mean-aggregator message-passing network with fixed
random weights, or from propagated features ``Ã^K X W``.  The decoder is a
small MLP trained by cross-entropy on (possibly noise-perturbed) embeddings.

Decoder checkpoint layout::

    b"SDD1" | num_classes: u64 LE | SDW1 transform checkpoint
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph_store import Graph, NormalizedAdjacency, check_matrix
from .transform import (GradientBundle, TransformParams, _backward, _forward_cached,
                        apply_gradient, decode_params, encode_params, forward)

DECODER_MAGIC = b"SDD1"


# ------------------------------------------------------ message passing

@dataclass(frozen=True)
class SageParams:
    """Per-layer ``(W_self, W_neigh, bias)``; relu on hidden layers, last layer linear."""

    layers: tuple
    hidden_activation: str = "relu"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("at least one layer required")
        for k, (ws, wn, b) in enumerate(self.layers):
            if ws.shape != wn.shape or b.shape != (ws.shape[1],):
                raise ValueError(f"layer {k}: inconsistent shapes")
            if k and ws.shape[0] != self.layers[k - 1][0].shape[1]:
                raise ValueError(f"layer {k}: input dim does not chain")

    @property
    def dims(self):
        return [self.layers[0][0].shape[0]] + [ws.shape[1] for ws, _, _ in self.layers]

    @classmethod
    def init(cls, dims, seed=0, hidden_activation="relu"):
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            lim = np.sqrt(6.0 / (a + b))
            layers.append((rng.uniform(-lim, lim, (a, b)), rng.uniform(-lim, lim, (a, b)),
                           np.zeros(b)))
        return cls(tuple(layers), hidden_activation)


def sage_forward(g: Graph, X, params: SageParams) -> np.ndarray:
    """``h_z <- act(h_z W_self + mean_{v in N(z)} h_v W_neigh + b)``, layer by layer.

    Isolated nodes receive a zero neighbour term.
    """
    h = check_matrix(X, "features")
    if h.shape[0] != g.num_nodes or h.shape[1] != params.dims[0]:
        raise DataError(f"features are {h.shape}, expected ({g.num_nodes}, {params.dims[0]})")
    deg = g.degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    adj = g.to_scipy()
    last = len(params.layers) - 1
    for k, (ws, wn, b) in enumerate(params.layers):
        mean = (adj @ h) * inv[:, None]
        h = h @ ws + mean @ wn + b
        if k < last:
            if params.hidden_activation == "relu":
                h = np.maximum(h, 0.0)
            elif params.hidden_activation == "tanh":
                h = np.tanh(h)
    return h


def sgc_target(na: NormalizedAdjacency, X, K: int, W_lin) -> np.ndarray:
    """``Ã^K X W_lin`` by ``K`` sparse products."""
    if K < 0:
        raise ValueError("K must be >= 0")
    h = check_matrix(X, "features")
    a = na.to_scipy()
    for _ in range(K):
        h = a @ h
    return h @ np.asarray(W_lin, dtype=np.float64).reshape(h.shape[1], -1)


# -------------------------------------------------------------- decoder

@dataclass(frozen=True)
class DecoderParams:
    mlp: TransformParams

    @property
    def num_classes(self):
        return self.mlp.out_dim


@dataclass(frozen=True)
class DecoderConfig:
    hidden_dims: tuple = ()
    epochs: int = 200
    lr: float = 0.5
    noise_sigma: float = 0.0  # standard deviation of the training-time input noise
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0 or self.noise_sigma < 0:
            raise ValueError("epochs, lr and noise_sigma must be >= 0")


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def decoder_fit(embeddings, labels, cfg: DecoderConfig = DecoderConfig(), mask=None,
                num_classes=None) -> DecoderParams:
    """Full-batch gradient descent on mean cross-entropy over the masked rows.

    With ``noise_sigma > 0`` every epoch perturbs the inputs by fresh
    ``N(0, sigma^2)`` noise; prediction never adds noise.
    """
    E = check_matrix(embeddings, "embeddings")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != E.shape[0]:
        raise DataError("one label per embedding row required")
    mask = np.ones(E.shape[0], bool) if mask is None else np.asarray(mask, bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise DataError("empty training mask")
    k = int(labels[rows].max()) + 1 if num_classes is None else int(num_classes)
    if labels[rows].min() < 0 or labels[rows].max() >= k:
        raise DataError("labels out of range")
    rng = np.random.default_rng(cfg.seed)
    mlp = TransformParams.init([E.shape[1], *cfg.hidden_dims, k], cfg.activation,
                               seed=int(rng.integers(1 << 31)))
    x, y = E[rows], labels[rows]
    onehot = np.eye(k)[y]
    for _ in range(cfg.epochs):
        xin = x + rng.normal(0.0, cfg.noise_sigma, x.shape) if cfg.noise_sigma > 0 else x
        logits, cache = _forward_cached(mlp, xin)
        prob = softmax(logits)
        loss = -float(np.mean(np.log(prob[np.arange(y.size), y] + 1e-300)))
        gws, gbs = _backward(mlp, cache, (prob - onehot) / y.size)
        mlp = apply_gradient(mlp, GradientBundle(tuple(gws), tuple(gbs), loss), cfg.lr)
    return DecoderParams(mlp)


def decoder_predict(dec: DecoderParams, embedding) -> tuple[int, np.ndarray]:
    """Class id (lowest id among tied maxima) and the logits."""
    logits = forward(dec.mlp, np.asarray(embedding, dtype=np.float64))
    return int(np.argmax(logits)), logits


def save_decoder(dec: DecoderParams, path) -> None:
    Path(path).write_bytes(DECODER_MAGIC + struct.pack("<Q", dec.num_classes) + encode_params(dec.mlp))


def load_decoder(path) -> DecoderParams:
    buf = Path(path).read_bytes()
    if buf[:4] != DECODER_MAGIC or len(buf) < 12:
        raise DataError(f"{path}: not a decoder checkpoint")
    (k,) = struct.unpack_from("<Q", buf, 4)
    mlp, end = decode_params(buf, 12, str(path))
    if end != len(buf):
        raise DataError(f"{path}: {len(buf) - end} trailing bytes")
    if mlp.out_dim != k:
        raise DataError(f"{path}: header says {k} classes, network outputs {mlp.out_dim}")
    return DecoderParams(mlp)
