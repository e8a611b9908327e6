"""
Numerical core of the speed predictor.

Layer-wise rows of T are embedded by an affine map and encoded by a two-layer LSTM; the final hidden
state is concatenated with static, candidate and per-worker features and passed through a
two-layer dense head shared by all workers (so predictions permute with the workers).
Gradients are derived by hand for this fixed architecture. Everything is float64.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.models.metanet import (
    ALL_WEIGHTS, LAYER_SCALE, TRANSFER_FLOOR_MS, FeatureScaler, FeatureVector, MetaNetDims, MetaNetParams
)
from app.utils.errors import ShapeMismatchError

Weights = Dict[str, np.ndarray]


@dataclass
class RawBatch:
    """Unscaled feature arrays of samples sharing (n_layers, n_workers)."""
    rows: np.ndarray         # (B, l, ROW_FEATURES)
    workers: np.ndarray      # (B, n, WORKER_FEATURES)
    candidates: np.ndarray   # (B, CANDIDATE_FEATURES)
    statics: np.ndarray      # (B, 2)
    model_vec: np.ndarray    # (B, n_models)
    arch_vec: np.ndarray     # (B, n_archs)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def take(self, index: np.ndarray) -> "RawBatch":
        return RawBatch(self.rows[index], self.workers[index], self.candidates[index], self.statics[index],
                        self.model_vec[index], self.arch_vec[index])


@dataclass
class EncodedBatch:
    rows: np.ndarray
    workers: np.ndarray
    candidates: np.ndarray
    statics: np.ndarray
    model_vec: np.ndarray
    arch_vec: np.ndarray

    def __len__(self) -> int:
        return self.rows.shape[0]

    def take(self, index: np.ndarray) -> "EncodedBatch":
        return EncodedBatch(self.rows[index], self.workers[index], self.candidates[index], self.statics[index],
                            self.model_vec[index], self.arch_vec[index])


def raw_features(features: Sequence[FeatureVector], n_max: int) -> RawBatch:
    """Stack raw arrays; all features must share (n_layers, n_workers) and fit within n_max workers."""
    if not features:
        raise ValueError("no features given")
    keys = {f.shape_key for f in features}
    if len(keys) != 1:
        raise ShapeMismatchError(f"features mix shapes {sorted(keys)}")
    n_workers = features[0].n_workers
    if n_workers > n_max:
        raise ShapeMismatchError(f"{n_workers} workers exceed the model's n_max of {n_max}")
    t_ms = np.array([f.t_seq for f in features], dtype=np.float64) * 1000.0          # (B, l, n)
    layer_bytes = np.array([f.layer_bytes for f in features], dtype=np.float64)      # (B, l)
    link = np.minimum(np.array([f.b_down for f in features], dtype=np.float64),
                      np.array([f.b_up for f in features], dtype=np.float64))         # (B, n) Gbps
    partition = np.array([f.partition_bytes for f in features], dtype=np.float64)    # (B,)
    credit = np.array([f.credit_multiplier for f in features], dtype=np.float64)     # (B,)

    chunks = np.ceil(np.maximum(layer_bytes, 1.0) / partition[:, None])              # (B, l)
    transfer_ms = layer_bytes * 8e-6                                                 # ms at 1 Gbps
    slowest = link.min(axis=1)
    rows = np.stack([
        t_ms.mean(axis=2),
        t_ms.max(axis=2),
        np.log2(np.maximum(layer_bytes, 1.0)),
        np.log2(1.0 + chunks),
        np.log2(TRANSFER_FLOOR_MS + transfer_ms / slowest[:, None]),
    ], axis=2)
    workers = np.stack([
        np.log2(np.array([f.b_down for f in features], dtype=np.float64)),
        np.log2(np.array([f.b_up for f in features], dtype=np.float64)),
        t_ms.sum(axis=1),
        np.log2(TRANSFER_FLOOR_MS + transfer_ms.sum(axis=1)[:, None] / link),
    ], axis=2)
    total_chunks = chunks.sum(axis=1)
    candidates = np.stack([
        np.log2(partition),
        credit,
        np.log2(1.0 + total_chunks),
        np.log2(np.maximum(1.0, np.minimum(credit, total_chunks))),
    ], axis=1)
    statics = np.array([[f.n_workers / n_max, f.n_layers / LAYER_SCALE] for f in features], dtype=np.float64)
    model_vec = np.array([f.model_embedding for f in features], dtype=np.float64)
    arch_vec = np.array([f.arch_embedding for f in features], dtype=np.float64)
    return RawBatch(rows, workers, candidates, statics, model_vec, arch_vec)


def encode(raw: RawBatch, scaler: FeatureScaler) -> EncodedBatch:
    """Standardize raw arrays with the model's statistics."""
    def standardize(values: np.ndarray, mean: Tuple[float, ...], std: Tuple[float, ...]) -> np.ndarray:
        return (values - np.asarray(mean)) / np.asarray(std)

    return EncodedBatch(
        rows=standardize(raw.rows, scaler.row_mean, scaler.row_std),
        workers=standardize(raw.workers, scaler.worker_mean, scaler.worker_std),
        candidates=standardize(raw.candidates, scaler.candidate_mean, scaler.candidate_std),
        statics=raw.statics,
        model_vec=raw.model_vec,
        arch_vec=raw.arch_vec,
    )


def encode_features(features: Sequence[FeatureVector], scaler: FeatureScaler) -> EncodedBatch:
    return encode(raw_features(features, scaler.n_max), scaler)


def init_weights(dims: MetaNetDims, seed: int = 0) -> Weights:
    """Glorot-uniform matrices, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    weights: Weights = {}
    for name, shape in dims.shapes().items():
        if len(shape) == 1:
            weights[name] = np.zeros(shape, dtype=np.float64)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-limit, limit, size=shape)
    h = dims.hidden_dim
    weights["lstm1_b"][h:2 * h] = 1.0
    weights["lstm2_b"][h:2 * h] = 1.0
    return weights


def zero_weights(dims: MetaNetDims) -> Weights:
    return {name: np.zeros(shape, dtype=np.float64) for name, shape in dims.shapes().items()}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_batch(weights: Weights, dims: MetaNetDims, batch: EncodedBatch) -> None:
    if batch.rows.ndim != 3 or batch.rows.shape[2] != weights["embed_W"].shape[1]:
        raise ShapeMismatchError(f"layer rows have shape {batch.rows.shape}")
    if batch.model_vec.shape[1] != dims.n_models:
        raise ShapeMismatchError(f"model embedding has {batch.model_vec.shape[1]} entries, expected {dims.n_models}")
    if batch.arch_vec.shape[1] != dims.n_archs:
        raise ShapeMismatchError(f"arch embedding has {batch.arch_vec.shape[1]} entries, expected {dims.n_archs}")
    z_dim = dims.hidden_dim + batch.statics.shape[1] + 2 * dims.type_embed_dim \
        + batch.candidates.shape[1] + batch.workers.shape[2]
    if z_dim != weights["dense1_W"].shape[1]:
        raise ShapeMismatchError(f"head input has {z_dim} features, weights expect {weights['dense1_W'].shape[1]}")


def _lstm_step(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, W: np.ndarray, b: np.ndarray, hidden: int):
    inp = np.concatenate([x, h_prev], axis=1)
    a = inp @ W.T + b
    gates = _sigmoid(a[:, :3 * hidden])
    i, f, o = gates[:, :hidden], gates[:, hidden:2 * hidden], gates[:, 2 * hidden:]
    g = np.tanh(a[:, 3 * hidden:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (inp, i, f, o, g, c_prev, tc)


def _lstm_step_backward(dh: np.ndarray, dc_next: np.ndarray, cache, W: np.ndarray, dW: np.ndarray, db: np.ndarray):
    inp, i, f, o, g, c_prev, tc = cache
    do = dh * tc
    dc = dc_next + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1)
    dW += da.T @ inp
    db += da.sum(axis=0)
    return da @ W, dc * f


def forward(weights: Weights, dims: MetaNetDims, batch: EncodedBatch) -> Tuple[np.ndarray, dict]:
    """Standardized per-worker output y of shape (B, n) and the cache for backward."""
    _check_batch(weights, dims, batch)
    size, length, _ = batch.rows.shape
    n_workers = batch.workers.shape[1]
    hidden = dims.hidden_dim

    embedded = batch.rows @ weights["embed_W"].T + weights["embed_b"]
    h1 = np.zeros((size, hidden))
    c1 = np.zeros((size, hidden))
    h2 = np.zeros((size, hidden))
    c2 = np.zeros((size, hidden))
    steps = []
    for t in range(length):
        h1, c1, cache1 = _lstm_step(embedded[:, t], h1, c1, weights["lstm1_W"], weights["lstm1_b"], hidden)
        h2, c2, cache2 = _lstm_step(h1, h2, c2, weights["lstm2_W"], weights["lstm2_b"], hidden)
        steps.append((cache1, cache2))

    model_part = batch.model_vec @ weights["model_table"].T
    arch_part = batch.arch_vec @ weights["arch_table"].T
    shared = np.concatenate([h2, batch.statics, model_part, arch_part, batch.candidates], axis=1)
    z = np.concatenate([np.repeat(shared[:, None, :], n_workers, axis=1), batch.workers], axis=2)
    act = np.tanh(z @ weights["dense1_W"].T + weights["dense1_b"])
    y = (act @ weights["dense2_W"].T + weights["dense2_b"])[..., 0]
    cache = {"batch": batch, "steps": steps, "z": z, "act": act, "shared_dim": shared.shape[1]}
    return y, cache


def backward(weights: Weights, dims: MetaNetDims, cache: dict, dy: np.ndarray,
             names: Optional[Iterable[str]] = None) -> Weights:
    """Gradients of a scalar objective given dObjective/dy; encoder backprop is skipped for head-only names."""
    wanted = set(ALL_WEIGHTS if names is None else names)
    grads = {name: np.zeros_like(weights[name]) for name in ALL_WEIGHTS}
    batch: EncodedBatch = cache["batch"]
    z, act = cache["z"], cache["act"]
    dense_dim = act.shape[2]
    hidden, type_dim = dims.hidden_dim, dims.type_embed_dim

    grads["dense2_W"] = dy.reshape(1, -1) @ act.reshape(-1, dense_dim)
    grads["dense2_b"] = np.array([dy.sum()])
    du = dy[..., None] * weights["dense2_W"][0] * (1.0 - act * act)
    grads["dense1_W"] = du.reshape(-1, dense_dim).T @ z.reshape(-1, z.shape[2])
    grads["dense1_b"] = du.sum(axis=(0, 1))
    if not wanted - {"dense1_W", "dense1_b", "dense2_W", "dense2_b"}:
        return grads

    dshared = (du @ weights["dense1_W"]).sum(axis=1)[:, :cache["shared_dim"]]
    offset = hidden + batch.statics.shape[1]
    grads["model_table"] = dshared[:, offset:offset + type_dim].T @ batch.model_vec
    grads["arch_table"] = dshared[:, offset + type_dim:offset + 2 * type_dim].T @ batch.arch_vec

    dh2 = dshared[:, :hidden]
    dc2 = np.zeros_like(dh2)
    dh1 = np.zeros_like(dh2)
    dc1 = np.zeros_like(dh2)
    embed_dim = weights["embed_W"].shape[0]
    dembedded = np.zeros((len(batch), len(cache["steps"]), embed_dim))
    for t in reversed(range(len(cache["steps"]))):
        cache1, cache2 = cache["steps"][t]
        dinp2, dc2 = _lstm_step_backward(dh2, dc2, cache2, weights["lstm2_W"], grads["lstm2_W"], grads["lstm2_b"])
        dh2 = dinp2[:, hidden:]
        dinp1, dc1 = _lstm_step_backward(dh1 + dinp2[:, :hidden], dc1, cache1,
                                         weights["lstm1_W"], grads["lstm1_W"], grads["lstm1_b"])
        dembedded[:, t] = dinp1[:, :embed_dim]
        dh1 = dinp1[:, embed_dim:]

    grads["embed_W"] = dembedded.reshape(-1, embed_dim).T @ batch.rows.reshape(-1, batch.rows.shape[2])
    grads["embed_b"] = dembedded.sum(axis=(0, 1))
    return grads


def objective(weights: Weights, dims: MetaNetDims, scaler: FeatureScaler, batch: EncodedBatch,
              labels: np.ndarray) -> Tuple[float, np.ndarray, dict]:
    """0.5 * mean over samples of the squared residual norm in standardized log speed; returns (J, dJ/dy, cache)."""
    y, cache = forward(weights, dims, batch)
    if labels.shape != y.shape:
        raise ShapeMismatchError(f"labels have shape {labels.shape}, predictions {y.shape}")
    if np.any(labels <= 0):
        raise ValueError("speed labels must be > 0")
    residual = y - (np.log(labels) - scaler.log_speed_mean) / scaler.log_speed_std
    value = 0.5 * float(np.sum(residual * residual)) / len(batch)
    return value, residual / len(batch), cache


def predict_encoded(params: MetaNetParams, batch: EncodedBatch) -> np.ndarray:
    y, _ = forward(params.weights, params.dims, batch)
    return np.exp(y * params.scaler.log_speed_std + params.scaler.log_speed_mean)


def l2_loss(predicted: Sequence[float], observed: Sequence[float]) -> float:
    """Euclidean norm of the prediction error."""
    predicted, observed = np.asarray(predicted, dtype=np.float64), np.asarray(observed, dtype=np.float64)
    if predicted.shape != observed.shape:
        raise ShapeMismatchError(f"length mismatch: {predicted.shape} vs {observed.shape}")
    return float(np.sqrt(np.sum((predicted - observed) ** 2)))


class Adam:
    """Adam with per-parameter moment estimates for a named subset of weights."""

    def __init__(self, names: Iterable[str], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.names: List[str] = list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: Weights = {}
        self.v: Weights = {}

    def step(self, weights: Weights, grads: Weights) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name in self.names:
            grad = grads[name]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(grad)
                self.v[name] = np.zeros_like(grad)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            weights[name] -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
