"""Learnable features, MLP sign classifier, loss, exact gradients and Adam training."""

import hashlib
import io
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import lowrank
from .data import EdgeSplit, LabeledEdges, training_graph
from .encoder import EncoderConfig, encode, encoder_vjp
from .errors import DegenerateLabels, EmptyBatch, EmptySplit, IndexOutOfRange, NumericFailure, ShapeMismatch
from .graph import normalize
from .metrics import auc_roc, evaluate, f1_suite

log = logging.getLogger(__name__)

PARAM_NAMES = ("x_u", "x_v", "w1", "b1", "w2", "b2")
PROB_CLAMP = 1e-12
SELECT_METRICS = ("auc", "macro_f1")

RANK_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
INJECTION_GRID = (0.01, 0.02, 0.15, 0.45, 0.75, 1.0)
LAYER_GRID = (0, 1, 2, 3, 4, 5)


class Ablation(str, Enum):
    FULL = "full"
    NO_RMP = "no-rmp"
    NO_SPMP = "no-spmp"


@dataclass
class HyperParams:
    final_dim: int = 32
    layers: int = 2
    injection_ratio: float = 0.15
    rank_ratio: float = 0.1
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    epochs: int = 200
    seed: int = 0
    mlp_hidden: int = 32
    ablation: str = Ablation.FULL.value
    select_metric: str = "auc"

    def __post_init__(self):
        self.ablation = Ablation(self.ablation).value
        if self.select_metric not in SELECT_METRICS:
            raise ValueError(f"unknown selection metric {self.select_metric!r}")
        if self.final_dim % (2 * self.n_encoders):
            raise ValueError(f"final_dim {self.final_dim} not divisible by {2 * self.n_encoders}")
        if self.mlp_hidden < 1:
            raise ValueError("mlp_hidden must be >= 1")

    @property
    def use_spmp(self) -> bool:
        return self.ablation != Ablation.NO_SPMP.value

    @property
    def use_rmp(self) -> bool:
        return self.ablation != Ablation.NO_RMP.value

    @property
    def n_encoders(self) -> int:
        return int(self.use_spmp) + int(self.use_rmp)

    @property
    def embed_dim(self) -> int:
        """Internal feature width d; each encoder emits 2d columns."""
        return self.final_dim // (2 * self.n_encoders)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            layers=self.layers,
            injection_ratio=self.injection_ratio,
            use_spmp=self.use_spmp,
            use_rmp=self.use_rmp,
        )

    def as_dict(self):
        return asdict(self)

    def digest(self) -> bytes:
        text = ";".join(f"{k}={v}" for k, v in sorted(self.as_dict().items()))
        return hashlib.sha256(text.encode()).digest()[:8]

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class ModelParams:
    x_u: np.ndarray
    x_v: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def items(self):
        return [(name, getattr(self, name)) for name in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(*(getattr(self, n).copy() for n in PARAM_NAMES))

    def sum_of_squares(self) -> float:
        return float(sum(np.sum(a * a) for _, a in self.items()))

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.items()])

    def unflatten(self, flat) -> "ModelParams":
        out, offset = [], 0
        for _, a in self.items():
            out.append(np.asarray(flat[offset:offset + a.size], dtype=np.float64).reshape(a.shape).copy())
            offset += a.size
        return ModelParams(*out)


def _glorot(rng, shape):
    bound = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_params(n_u, n_v, d, h, seed=0, n_encoders=2) -> ModelParams:
    """Glorot-uniform features and MLP weights, zero biases.

    The MLP input is concat(z_u, z_v), each of width 2d per encoder.
    """
    rng = np.random.default_rng(seed)
    in_width = 2 * 2 * d * n_encoders
    return ModelParams(
        x_u=_glorot(rng, (n_u, d)),
        x_v=_glorot(rng, (n_v, d)),
        w1=_glorot(rng, (in_width, h)),
        b1=np.zeros(h),
        w2=_glorot(rng, (h, 1)),
        b2=np.zeros(1),
    )


@dataclass
class ForwardCache:
    u: np.ndarray
    v: np.ndarray
    inputs: np.ndarray
    pre_act: np.ndarray
    hidden: np.ndarray
    scores: np.ndarray


def _check_pairs(z_u, z_v, u, v):
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    if u.shape != v.shape:
        raise ShapeMismatch("u and v index arrays differ in length")
    if u.size and (u.min() < 0 or u.max() >= z_u.shape[0] or v.min() < 0 or v.max() >= z_v.shape[0]):
        raise IndexOutOfRange("edge endpoint outside the representation matrices")
    return u, v


def score_forward(z_u, z_v, u, v, p: ModelParams) -> ForwardCache:
    u, v = _check_pairs(z_u, z_v, u, v)
    inputs = np.hstack([z_u[u], z_v[v]])
    if inputs.shape[1] != p.w1.shape[0]:
        raise ShapeMismatch(f"MLP expects width {p.w1.shape[0]}, got {inputs.shape[1]}")
    pre_act = inputs @ p.w1 + p.b1
    hidden = np.maximum(pre_act, 0.0)
    logits = (hidden @ p.w2).ravel() + p.b2[0]
    return ForwardCache(u, v, inputs, pre_act, hidden, expit(logits))


def score_edges(z_u, z_v, pairs, p: ModelParams) -> np.ndarray:
    """Positive-sign likelihood for each (u, v) pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return score_forward(z_u, z_v, pairs[:, 0], pairs[:, 1], p).scores


def bce_loss(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.size == 0:
        raise EmptyBatch("BCE over an empty batch")
    if scores.shape != labels.shape:
        raise ShapeMismatch("scores and labels differ in length")
    y = np.clip(scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-np.mean(labels * np.log(y) + (1.0 - labels) * np.log1p(-y)))


def total_loss(bce, params: ModelParams, weight_decay) -> float:
    """BCE plus weight_decay times the squared L2 norm of every parameter."""
    if weight_decay < 0:
        raise ValueError("weight decay must be non-negative")
    return bce + weight_decay * params.sum_of_squares()


def scatter_matrix(index, n_rows) -> sp.csr_matrix:
    """Sparse S with S[index[i], i] = 1, so S @ g sums rows of g per node."""
    index = np.asarray(index, dtype=np.int64)
    return sp.csr_matrix((np.ones(index.size), (index, np.arange(index.size))),
                         shape=(n_rows, index.size))


def backward(cache: ForwardCache, labels, ng, store, cfg: EncoderConfig, params: ModelParams,
             weight_decay, n_u=None, n_v=None, scatter_u=None, scatter_v=None) -> ModelParams:
    """Exact gradient of the regularized objective with respect to every parameter."""
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.size
    if n == 0:
        raise EmptyBatch("backward over an empty batch")
    if cache.scores.shape != labels.shape:
        raise ShapeMismatch("labels do not match the cached forward pass")
    n_u = params.x_u.shape[0] if n_u is None else n_u
    n_v = params.x_v.shape[0] if n_v is None else n_v

    # d BCE / d logit for a sigmoid output.
    g_logit = ((cache.scores - labels) / n)[:, None]
    g_w2 = cache.hidden.T @ g_logit
    g_b2 = g_logit.sum(axis=0)
    g_pre = (g_logit @ params.w2.T) * (cache.pre_act > 0)
    g_w1 = cache.inputs.T @ g_pre
    g_b1 = g_pre.sum(axis=0)
    g_inputs = g_pre @ params.w1.T

    width = g_inputs.shape[1] // 2
    if scatter_u is None:
        scatter_u = scatter_matrix(cache.u, n_u)
    if scatter_v is None:
        scatter_v = scatter_matrix(cache.v, n_v)
    grad_z_u = scatter_u @ g_inputs[:, :width]
    grad_z_v = scatter_v @ g_inputs[:, width:]
    g_x_u, g_x_v = encoder_vjp(ng, store, cfg, grad_z_u, grad_z_v)

    grads = ModelParams(np.asarray(g_x_u), np.asarray(g_x_v), g_w1, g_b1, g_w2, g_b2)
    if weight_decay:
        for name, value in params.items():
            g = getattr(grads, name)
            g += 2.0 * weight_decay * value
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(a) for name, a in params.items()},
            v={name: np.zeros_like(a) for name, a in params.items()},
        )


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, lr) -> None:
    """In-place Adam update with bias correction; no decoupled weight decay."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, value in params.items():
        g = getattr(grads, name)
        if g.shape != value.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        value -= lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    val_macro_f1: float
    seconds: float


@dataclass
class Snapshot:
    epoch: int
    val_score: float
    params: ModelParams


@dataclass
class TrainedModel:
    params: ModelParams
    hp: HyperParams
    cfg: EncoderConfig
    ng: object
    store: Optional[lowrank.LowRankStore]
    log: list = field(default_factory=list)
    best_epoch: int = 0
    preprocess_seconds: float = 0.0
    snapshots: dict = field(default_factory=dict)

    def representations(self):
        return encode(self.ng, self.store, self.params.x_u, self.params.x_v, self.cfg)

    def predict(self, u, v, params: Optional[ModelParams] = None) -> np.ndarray:
        params = self.params if params is None else params
        z_u, z_v = encode(self.ng, self.store, params.x_u, params.x_v, self.cfg)
        return score_forward(z_u, z_v, u, v, params).scores

    def evaluate(self, edges: LabeledEdges, metric: Optional[str] = None):
        """Metrics on ``edges`` using the snapshot chosen for ``metric`` (default: hp's)."""
        params = self.params if metric is None else self.snapshots[metric].params
        return evaluate(self.predict(edges.u, edges.v, params), edges.label)


def _val_metrics(scores, labels):
    if labels.size == 0:
        return math.nan, math.nan
    try:
        auc = auc_roc(scores, labels)
    except DegenerateLabels:
        auc = math.nan
    return auc, f1_suite(scores, labels)[1]


def fit(dataset: EdgeSplit, hp: HyperParams, svd_cache_dir=None, store=None, on_epoch=None) -> TrainedModel:
    """Full-batch training; keeps the parameters with the best validation score.

    Snapshots are tracked for both validation AUC and Macro-F1; the returned
    ``params`` follow ``hp.select_metric``. While validation cannot be scored
    (empty or single-class split) the latest epoch is kept.
    """
    if len(dataset.train) == 0:
        raise EmptySplit("cannot train on an empty split")
    n_u, n_v = dataset.n_u, dataset.n_v
    cfg = hp.encoder_config()
    ng = normalize(training_graph(dataset))

    t0 = time.perf_counter()
    if hp.use_rmp and store is None:
        k = lowrank.target_rank(n_u, n_v, hp.rank_ratio)
        store = lowrank.cached_preprocess(ng, k, seed=hp.seed, cache_dir=svd_cache_dir)
    preprocess_seconds = time.perf_counter() - t0

    params = init_params(n_u, n_v, hp.embed_dim, hp.mlp_hidden, hp.seed, hp.n_encoders)
    state = AdamState.zeros_like(params)
    train, val = dataset.train, dataset.val
    scatter_u = scatter_matrix(train.u, n_u)
    scatter_v = scatter_matrix(train.v, n_v)

    # Best snapshot per selection metric; the one named by hp.select_metric is returned.
    best = {key: [-math.inf, 0, params.copy()] for key in SELECT_METRICS}
    records = []
    z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
    for epoch in range(1, hp.epochs + 1):
        t_start = time.perf_counter()
        cache = score_forward(z_u, z_v, train.u, train.v, params)
        loss = total_loss(bce_loss(cache.scores, train.label), params, hp.weight_decay)
        if not math.isfinite(loss):
            raise NumericFailure(f"non-finite training loss {loss} at epoch {epoch}")
        grads = backward(cache, train.label, ng, store, cfg, params, hp.weight_decay,
                         n_u, n_v, scatter_u, scatter_v)
        adam_step(params, grads, state, hp.learning_rate)
        # This encoding serves both validation now and the next epoch's forward pass.
        z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
        val_scores = score_forward(z_u, z_v, val.u, val.v, params).scores if len(val) else np.empty(0)
        val_auc, val_f1 = _val_metrics(val_scores, val.label)
        seconds = time.perf_counter() - t_start
        rec = EpochRecord(epoch, loss, val_auc, val_f1, seconds)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

        for key, score in (("auc", val_auc), ("macro_f1", val_f1)):
            slot = best[key]
            if not math.isfinite(score):
                if not math.isfinite(slot[0]):
                    slot[1:] = [epoch, params.copy()]
            elif score > slot[0]:
                slot[:] = [score, epoch, params.copy()]

    snapshots = {key: Snapshot(epoch, score, p) for key, (score, epoch, p) in best.items()}
    chosen = snapshots[hp.select_metric]
    log.debug("best epoch %d (%s=%.4f)", chosen.epoch, hp.select_metric, chosen.val_score)
    return TrainedModel(chosen.params, hp, cfg, ng, store, records, chosen.epoch,
                        preprocess_seconds, snapshots)


# -- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = b"SBCK"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIqqqq8s")


def write_checkpoint(path, params: ModelParams, hp: HyperParams):
    n_u, d = params.x_u.shape
    n_v = params.x_v.shape[0]
    h = params.w1.shape[1]
    buf = io.BytesIO()
    buf.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, n_u, n_v, d, h, hp.digest()))
    for _, arr in params.items():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path):
    """Returns (params, hp_digest)."""
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError("truncated checkpoint")
    magic, version, n_u, n_v, d, h, digest = _CKPT_HEADER.unpack_from(raw)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError(f"not a checkpoint (magic={magic!r}, version={version})")
    floats = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size)
    # w1's row count is the only size not in the header.
    fixed = n_u * d + n_v * d + h + h + 1
    in_width, rem = divmod(floats.size - fixed, h)
    if rem or in_width <= 0:
        raise ValueError("checkpoint payload does not match its header")
    shapes = [(n_u, d), (n_v, d), (in_width, h), (h,), (h, 1), (1,)]
    arrays, offset = [], 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(floats[offset:offset + count].reshape(shape).astype(np.float64))
        offset += count
    return ModelParams(*arrays), digest
