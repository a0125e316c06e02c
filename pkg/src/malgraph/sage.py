"""GraphSAGE classifier core: forward, exact backward, adaptive-moment steps.

The model is an embedding layer (a dense layer applied to one-hot opcode rows,
realized as a row lookup), a stack of mean-aggregator SAGE layers
h'(v) = act(Wᵀ·[h(v) ; mean_{u∈N(v)} h(u)] + b), global mean pooling and a
sigmoid output unit.  A batch runs as one disjoint union with per-graph
pooling segments, so batched and per-graph scores agree to float64 rounding.

All math is float64 and hand-differentiated; gradients are validated against
central finite differences in the test suite.  Neighborhoods are sets under
the configured view; full neighborhoods are the deterministic default and
uniform down-sampling is an opt-in (`sample_cap`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .analytics import OpVocabulary, one_hot
from .errors import (
    CacheMismatch,
    EmptyDataset,
    EmptyGraph,
    GraphFormatError,
    IoError,
    MalformedFile,
    ShapeMismatch,
    VersionMismatch,
    VocabMismatch,
)

ACTIVATIONS = ("leaky_relu", "relu")
NEIGHBOR_VIEWS = ("undirected", "directed_in")
LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class ArchConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 128
    num_sage_layers: int = 6
    use_embedding: bool = True
    activation: str = "leaky_relu"
    neighbor_view: str = "undirected"
    sample_cap: int | None = None

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.hidden_dim,
               self.num_sage_layers) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.neighbor_view not in NEIGHBOR_VIEWS:
            raise ValueError(f"neighbor_view must be one of {NEIGHBOR_VIEWS}")
        if self.sample_cap is not None and self.sample_cap < 1:
            raise ValueError("sample_cap must be >= 1 when present")

    @property
    def input_dim(self) -> int:
        return self.embed_dim if self.use_embedding else self.vocab_size


@dataclass
class ModelParams:
    arch: ArchConfig
    embed_W: np.ndarray | None
    embed_b: np.ndarray | None
    sage_W: list
    sage_b: list
    out_W: np.ndarray
    out_b: np.ndarray  # 0-d array

    def tensors(self) -> dict:
        """Name → array view of every trainable tensor, in a fixed order."""
        out = {}
        if self.embed_W is not None:
            out["embed_W"] = self.embed_W
            out["embed_b"] = self.embed_b
        for k, (w, b) in enumerate(zip(self.sage_W, self.sage_b)):
            out[f"sage_W.{k}"] = w
            out[f"sage_b.{k}"] = b
        out["out_W"] = self.out_W
        out["out_b"] = self.out_b
        return out


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(arch: ArchConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in (arch, seed)."""
    rng = np.random.default_rng(seed)
    if arch.use_embedding:
        embed_W = _glorot(rng, arch.vocab_size, arch.embed_dim,
                          (arch.vocab_size, arch.embed_dim))
        embed_b = np.zeros(arch.embed_dim)
    else:
        embed_W = embed_b = None
    sage_W, sage_b = [], []
    d_in = arch.input_dim
    for _ in range(arch.num_sage_layers):
        sage_W.append(_glorot(rng, 2 * d_in, arch.hidden_dim,
                              (2 * d_in, arch.hidden_dim)))
        sage_b.append(np.zeros(arch.hidden_dim))
        d_in = arch.hidden_dim
    out_W = _glorot(rng, arch.hidden_dim, 1, (arch.hidden_dim,))
    out_b = np.zeros(())
    return ModelParams(arch, embed_W, embed_b, sage_W, sage_b, out_W, out_b)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(float)
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sample_neighbors(neigh, cap: int, rng) -> list:
    """At most `cap` neighbors, uniform without replacement, order preserved."""
    if len(neigh) <= cap:
        return list(neigh)
    picked = rng.choice(len(neigh), size=cap, replace=False)
    return [neigh[i] for i in sorted(picked)]


def _neighbor_matrix(batch, offsets, arch: ArchConfig, rng) -> sp.csr_matrix:
    """Row-stochastic-or-zero aggregation matrix A with A[v,u] = 1/|N(v)|."""
    pairs = set()
    for off, sample in zip(offsets, batch):
        for s, d in sample.edges:
            pairs.add((off + d, off + s))
            if arch.neighbor_view == "undirected":
                pairs.add((off + s, off + d))
    total = offsets[-1] + batch[-1].num_nodes

    neigh: dict[int, list] = {}
    for v, u in sorted(pairs):
        neigh.setdefault(v, []).append(u)

    if arch.sample_cap is not None:
        if rng is None:
            rng = np.random.default_rng(0)
        bounds = list(offsets) + [total]
        for gi, sample in enumerate(batch):
            avg_deg = 2 * len(sample.edges) / sample.num_nodes
            cap = min(arch.sample_cap, max(1, math.ceil(avg_deg)))
            for v in range(bounds[gi], bounds[gi + 1]):
                if v in neigh and len(neigh[v]) > cap:
                    neigh[v] = sample_neighbors(neigh[v], cap, rng)

    rows, cols, vals = [], [], []
    for v, us in neigh.items():
        w = 1.0 / len(us)
        for u in us:
            rows.append(v)
            cols.append(u)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(total, total))


@dataclass
class ForwardCache:
    params: ModelParams
    scores: np.ndarray
    idx: np.ndarray | None          # embedding rows, when use_embedding
    z_embed: np.ndarray | None
    hs: list = field(default_factory=list)    # H_0 .. H_L
    ms: list = field(default_factory=list)    # aggregated means per layer
    zs: list = field(default_factory=list)    # pre-activations per layer
    agg: sp.csr_matrix | None = None
    pooled: np.ndarray | None = None
    starts: np.ndarray | None = None
    counts: np.ndarray | None = None


def forward(params: ModelParams, batch, rng=None):
    """Score a batch of GraphSamples; returns (scores, cache)."""
    batch = list(batch)
    if not batch:
        raise EmptyDataset("forward needs at least one graph")
    if any(s.num_nodes == 0 for s in batch):
        raise EmptyGraph("forward received a sample with zero nodes")
    arch = params.arch

    counts = np.array([s.num_nodes for s in batch])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int)
    idx = np.concatenate([np.asarray(s.node_ops, dtype=np.intp) for s in batch])
    if idx.max() >= arch.vocab_size:
        raise VocabMismatch(
            f"node op index {int(idx.max())} outside vocabulary of size {arch.vocab_size}")

    kind = arch.activation
    if arch.use_embedding:
        z_embed = params.embed_W[idx] + params.embed_b
        h = _act(z_embed, kind)
        cache_idx = idx
    else:
        z_embed = None
        cache_idx = None
        h = one_hot(idx, arch.vocab_size)

    agg = _neighbor_matrix(batch, offsets, arch, rng)
    cache = ForwardCache(params=params, scores=None, idx=cache_idx,
                         z_embed=z_embed, agg=agg)
    cache.hs.append(h)
    for k in range(arch.num_sage_layers):
        m = agg @ h
        z = np.concatenate([h, m], axis=1) @ params.sage_W[k] + params.sage_b[k]
        h = _act(z, kind)
        cache.ms.append(m)
        cache.zs.append(z)
        cache.hs.append(h)

    pooled = np.add.reduceat(h, offsets, axis=0) / counts[:, None]
    scores = _sigmoid(pooled @ params.out_W + params.out_b)
    cache.pooled = pooled
    cache.starts = offsets
    cache.counts = counts
    cache.scores = scores
    return scores, cache


CLAMP_LO = 1e-12
CLAMP_HI = 1.0 - 1e-12


def bce_loss(scores, labels) -> float:
    s = np.clip(np.asarray(scores, dtype=float), CLAMP_LO, CLAMP_HI)
    y = np.asarray(labels, dtype=float)
    return float(-np.mean(y * np.log(s) + (1 - y) * np.log(1 - s)))


def backward(params: ModelParams, cache: ForwardCache, labels):
    """Mean binary cross-entropy and its exact gradients; returns (loss, grads)."""
    if cache.params is not params:
        raise CacheMismatch("cache was produced by different parameters")
    labels = np.asarray(labels, dtype=float)
    if labels.shape != cache.scores.shape:
        raise CacheMismatch(
            f"{labels.shape[0] if labels.ndim else 0} labels for {len(cache.scores)} scores")

    arch = params.arch
    s = cache.scores
    batch_size = len(s)
    loss = bce_loss(s, labels)

    # d loss / d pre-sigmoid; zero where the clamp froze the loss
    live = (s > CLAMP_LO) & (s < CLAMP_HI)
    dz_out = np.where(live, (s - labels) / batch_size, 0.0)

    grads = {"out_W": cache.pooled.T @ dz_out, "out_b": np.sum(dz_out)}
    d_pooled = np.outer(dz_out, params.out_W)
    dh = np.repeat(d_pooled / cache.counts[:, None], cache.counts, axis=0)

    kind = arch.activation
    for k in reversed(range(arch.num_sage_layers)):
        dz = dh * _act_grad(cache.zs[k], kind)
        concat = np.concatenate([cache.hs[k], cache.ms[k]], axis=1)
        grads[f"sage_W.{k}"] = concat.T @ dz
        grads[f"sage_b.{k}"] = dz.sum(axis=0)
        d_concat = dz @ params.sage_W[k].T
        d_in = cache.hs[k].shape[1]
        dh = d_concat[:, :d_in] + cache.agg.T @ d_concat[:, d_in:]

    if arch.use_embedding:
        dz0 = dh * _act_grad(cache.z_embed, kind)
        grads["embed_b"] = dz0.sum(axis=0)
        dw = np.zeros_like(params.embed_W)
        np.add.at(dw, cache.idx, dz0)
        grads["embed_W"] = dw

    grads["out_b"] = np.asarray(grads["out_b"])
    return loss, grads


@dataclass
class AdamState:
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.tensors().items()},
                   v={k: np.zeros_like(a) for k, a in params.tensors().items()})


def adam_step(params: ModelParams, grads: dict, state: AdamState, t: int, *,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Bias-corrected adaptive-moment update, in place; t is 1-based."""
    tensors = params.tensors()
    for name, arr in tensors.items():
        if name not in grads or np.shape(grads[name]) != arr.shape:
            raise ShapeMismatch(
                f"gradient for {name!r} has shape "
                f"{np.shape(grads.get(name))}, expected {arr.shape}")
    for name, arr in tensors.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * (g * g)
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# --- persistence -------------------------------------------------------------

def _arch_to_obj(arch: ArchConfig) -> dict:
    return {
        "vocab_size": arch.vocab_size,
        "embed_dim": arch.embed_dim,
        "hidden_dim": arch.hidden_dim,
        "num_sage_layers": arch.num_sage_layers,
        "use_embedding": arch.use_embedding,
        "activation": arch.activation,
        "neighbor_view": arch.neighbor_view,
        "sample_cap": arch.sample_cap,
    }


def model_to_json(params: ModelParams, vocab: OpVocabulary) -> bytes:
    if params.arch.vocab_size != vocab.size:
        raise VocabMismatch(
            f"arch expects {params.arch.vocab_size} names, vocabulary has {vocab.size}")
    weights = {
        "embed_W": None if params.embed_W is None else params.embed_W.tolist(),
        "embed_b": None if params.embed_b is None else params.embed_b.tolist(),
        "sage_W": [w.tolist() for w in params.sage_W],
        "sage_b": [b.tolist() for b in params.sage_b],
        "out_W": params.out_W.tolist(),
        "out_b": float(params.out_b),
    }
    obj = {
        "version": 1,
        "arch": _arch_to_obj(params.arch),
        "vocab": {"version": 1, "names": list(vocab.names)},
        "weights": weights,
    }
    try:
        return json.dumps(obj, separators=(",", ":"), allow_nan=False).encode("utf-8")
    except ValueError as e:
        raise GraphFormatError(f"model contains non-finite values: {e}") from None


def _expected_shapes(arch: ArchConfig) -> dict:
    shapes = {}
    if arch.use_embedding:
        shapes["embed_W"] = (arch.vocab_size, arch.embed_dim)
        shapes["embed_b"] = (arch.embed_dim,)
    d_in = arch.input_dim
    for k in range(arch.num_sage_layers):
        shapes[f"sage_W.{k}"] = (2 * d_in, arch.hidden_dim)
        shapes[f"sage_b.{k}"] = (arch.hidden_dim,)
        d_in = arch.hidden_dim
    shapes["out_W"] = (arch.hidden_dim,)
    shapes["out_b"] = ()
    return shapes


def _tensor(obj, name: str, expect) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=float) if obj is not None else None
    except (ValueError, TypeError):
        raise GraphFormatError(f"tensor {name!r} is not rectangular numeric data") from None
    if arr is None or arr.shape != expect:
        raise ShapeMismatch(
            f"tensor {name!r} has shape {None if arr is None else arr.shape}, "
            f"expected {expect}")
    if not np.all(np.isfinite(arr)):
        raise GraphFormatError(f"tensor {name!r} contains non-finite values")
    return arr


def model_from_json(data):
    """Parse a model document; returns (ModelParams, OpVocabulary)."""
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError, ValueError) as e:
        raise GraphFormatError(f"not valid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise GraphFormatError("top level must be an object")
    if obj.get("version") != 1:
        raise VersionMismatch(f"unsupported model version {obj.get('version')!r}")
    for key in ("arch", "vocab", "weights"):
        if key not in obj:
            raise GraphFormatError(f"missing field {key!r}")

    try:
        arch = ArchConfig(**obj["arch"])
    except (TypeError, ValueError) as e:
        raise GraphFormatError(f"bad arch: {e}") from None

    vob = obj["vocab"]
    if not isinstance(vob, dict) or vob.get("version") != 1:
        raise GraphFormatError("bad embedded vocabulary")
    names = vob.get("names")
    if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
        raise GraphFormatError("vocabulary names must be strings")
    try:
        vocab = OpVocabulary(names=tuple(names))
    except ValueError as e:
        raise GraphFormatError(str(e)) from None
    if vocab.size != arch.vocab_size:
        raise VocabMismatch(
            f"arch expects {arch.vocab_size} names, vocabulary has {vocab.size}")

    w = obj["weights"]
    if not isinstance(w, dict):
        raise GraphFormatError("weights must be an object")
    shapes = _expected_shapes(arch)
    sage_w_list = w.get("sage_W") or []
    sage_b_list = w.get("sage_b") or []
    if len(sage_w_list) != arch.num_sage_layers or len(sage_b_list) != arch.num_sage_layers:
        raise ShapeMismatch(
            f"expected {arch.num_sage_layers} sage layers, found "
            f"{len(sage_w_list)} weight / {len(sage_b_list)} bias tensors")

    if arch.use_embedding:
        embed_W = _tensor(w.get("embed_W"), "embed_W", shapes["embed_W"])
        embed_b = _tensor(w.get("embed_b"), "embed_b", shapes["embed_b"])
    else:
        embed_W = embed_b = None
    sage_W = [_tensor(sage_w_list[k], f"sage_W.{k}", shapes[f"sage_W.{k}"])
              for k in range(arch.num_sage_layers)]
    sage_b = [_tensor(sage_b_list[k], f"sage_b.{k}", shapes[f"sage_b.{k}"])
              for k in range(arch.num_sage_layers)]
    out_W = _tensor(w.get("out_W"), "out_W", shapes["out_W"])
    out_b = _tensor(w.get("out_b"), "out_b", ())
    params = ModelParams(arch, embed_W, embed_b, sage_W, sage_b, out_W, out_b)
    return params, vocab


def save_model(params: ModelParams, vocab: OpVocabulary, path):
    try:
        Path(path).write_bytes(model_to_json(params, vocab))
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from None


def load_model(path):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from None
    try:
        return model_from_json(data)
    except (GraphFormatError, VersionMismatch) as e:
        raise MalformedFile(str(path), str(e)) from None
