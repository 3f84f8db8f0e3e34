"""Signed personalized propagation on the original and the low-rank graph.

Both encoders run the same balance-theory recurrence. Going from U to V,

    P_V <- (1-c) (A+ P_U + A- M_U) + c X_V
    M_V <- (1-c) (A- P_U + A+ M_U)

where A+/A- are the transposed semi-normalized matrices (or their rank-k
factorizations), and symmetrically from V to U. Both directions read the
previous layer, the per-layer states are averaged with weights alpha_l, and
positive/negative channels are concatenated. The whole map X -> Z is linear,
so its adjoint is the same recurrence run backwards on transposed operators.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeMismatch
from .graph import NormalizedGraph
from .lowrank import QT_NEG, QT_POS, RT_NEG, RT_POS, LowRankStore, rmp_apply, rmp_apply_adjoint


@dataclass
class EncoderConfig:
    layers: int = 2
    injection_ratio: float = 0.15
    layer_weights: Optional[Sequence[float]] = None
    use_spmp: bool = True
    use_rmp: bool = True

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if not 0.0 < self.injection_ratio <= 1.0:
            raise ValueError(f"injection ratio must lie in (0, 1], got {self.injection_ratio}")
        if self.layer_weights is None:
            self.layer_weights = [1.0 / (self.layers + 1)] * (self.layers + 1)
        self.layer_weights = [float(a) for a in self.layer_weights]
        if len(self.layer_weights) != self.layers + 1:
            raise ValueError(f"need {self.layers + 1} layer weights, got {len(self.layer_weights)}")
        if any(a < 0 for a in self.layer_weights):
            raise ValueError("layer weights must be non-negative")
        if not (self.use_spmp or self.use_rmp):
            raise ValueError("at least one encoder must be enabled")

    @property
    def n_encoders(self) -> int:
        return int(self.use_spmp) + int(self.use_rmp)


@dataclass
class EmbeddingSet:
    p_u: np.ndarray
    m_u: np.ndarray
    p_v: np.ndarray
    m_v: np.ndarray

    @property
    def dim(self) -> int:
        return self.p_u.shape[1]


@dataclass
class HiddenEmbeddings:
    h_u: np.ndarray
    h_v: np.ndarray

    @property
    def dim(self) -> int:
        return self.h_u.shape[1] // 2


Operator = Callable[[np.ndarray], np.ndarray]


@dataclass
class _Operators:
    """Per-sign operators for both directions plus their transposes."""

    to_v_pos: Operator
    to_v_neg: Operator
    to_u_pos: Operator
    to_u_neg: Operator
    n_u: int
    n_v: int
    adjoint: Optional["_Operators"] = field(default=None, repr=False)


def _sparse_operators(ng: NormalizedGraph) -> _Operators:
    adjoint = _Operators(
        to_v_pos=ng.r_pos_norm.__matmul__, to_v_neg=ng.r_neg_norm.__matmul__,
        to_u_pos=ng.q_pos_norm.__matmul__, to_u_neg=ng.q_neg_norm.__matmul__,
        n_u=ng.n_u, n_v=ng.n_v,
    )
    return _Operators(
        to_v_pos=ng.rt_pos.__matmul__, to_v_neg=ng.rt_neg.__matmul__,
        to_u_pos=ng.qt_pos.__matmul__, to_u_neg=ng.qt_neg.__matmul__,
        n_u=ng.n_u, n_v=ng.n_v, adjoint=adjoint,
    )


def _lowrank_operators(store: LowRankStore) -> _Operators:
    fs = {key: store[key] for key in (RT_POS, RT_NEG, QT_POS, QT_NEG)}
    n_v, n_u = fs[RT_POS].shape

    def fwd(f):
        return lambda x: rmp_apply(f, x)

    def bwd(f):
        return lambda g: rmp_apply_adjoint(f, g)

    adjoint = _Operators(
        to_v_pos=bwd(fs[RT_POS]), to_v_neg=bwd(fs[RT_NEG]),
        to_u_pos=bwd(fs[QT_POS]), to_u_neg=bwd(fs[QT_NEG]),
        n_u=n_u, n_v=n_v,
    )
    return _Operators(
        to_v_pos=fwd(fs[RT_POS]), to_v_neg=fwd(fs[RT_NEG]),
        to_u_pos=fwd(fs[QT_POS]), to_u_neg=fwd(fs[QT_NEG]),
        n_u=n_u, n_v=n_v, adjoint=adjoint,
    )


def _signed_step(pos_op, neg_op, p, m, c, x=None):
    # One product per sign on [P | M] instead of four separate products.
    d = p.shape[1]
    pm = np.hstack([p, m])
    a = np.asarray(pos_op(pm))
    b = np.asarray(neg_op(pm))
    new_p = (1.0 - c) * (a[:, :d] + b[:, d:])
    new_m = (1.0 - c) * (b[:, :d] + a[:, d:])
    if x is not None:
        new_p += c * x
    return new_p, new_m


def _check_features(ops: _Operators, x_u, x_v):
    if x_u.ndim != 2 or x_v.ndim != 2:
        raise ShapeMismatch("feature matrices must be 2-D")
    if x_u.shape[0] != ops.n_u or x_v.shape[0] != ops.n_v:
        raise ShapeMismatch(
            f"features have {x_u.shape[0]}/{x_v.shape[0]} rows, graph has {ops.n_u}/{ops.n_v} nodes"
        )
    if x_u.shape[1] != x_v.shape[1]:
        raise ShapeMismatch("x_u and x_v must share the feature dimension")


def _propagate(ops: _Operators, x_u, x_v, cfg: EncoderConfig) -> EmbeddingSet:
    _check_features(ops, x_u, x_v)
    c = cfg.injection_ratio
    alpha = cfg.layer_weights
    p_u = m_u = x_u
    p_v = m_v = x_v
    agg = EmbeddingSet(alpha[0] * x_u, alpha[0] * x_u, alpha[0] * x_v, alpha[0] * x_v)
    for layer in range(1, cfg.layers + 1):
        new_p_v, new_m_v = _signed_step(ops.to_v_pos, ops.to_v_neg, p_u, m_u, c, x_v)
        p_u, m_u = _signed_step(ops.to_u_pos, ops.to_u_neg, p_v, m_v, c, x_u)
        p_v, m_v = new_p_v, new_m_v
        a = alpha[layer]
        agg.p_u += a * p_u
        agg.m_u += a * m_u
        agg.p_v += a * p_v
        agg.m_v += a * m_v
    return agg


def _propagate_adjoint(ops: _Operators, g: EmbeddingSet, cfg: EncoderConfig):
    """Pull gradients of the aggregated embeddings back to (X_U, X_V)."""
    c = cfg.injection_ratio
    alpha = cfg.layer_weights
    adj = ops.adjoint
    top = alpha[cfg.layers]
    lp_u, lm_u, lp_v, lm_v = top * g.p_u, top * g.m_u, top * g.p_v, top * g.m_v
    grad_x_u = np.zeros_like(g.p_u)
    grad_x_v = np.zeros_like(g.p_v)
    for layer in range(cfg.layers, 0, -1):
        grad_x_u += c * lp_u
        grad_x_v += c * lp_v
        # V-side states at layer l were produced from U-side states at l-1 and vice versa.
        prev_p_u, prev_m_u = _signed_step(adj.to_v_pos, adj.to_v_neg, lp_v, lm_v, c)
        prev_p_v, prev_m_v = _signed_step(adj.to_u_pos, adj.to_u_neg, lp_u, lm_u, c)
        a = alpha[layer - 1]
        lp_u = prev_p_u + a * g.p_u
        lm_u = prev_m_u + a * g.m_u
        lp_v = prev_p_v + a * g.p_v
        lm_v = prev_m_v + a * g.m_v
    # Layer 0 sets P = M = X.
    grad_x_u += lp_u + lm_u
    grad_x_v += lp_v + lm_v
    return grad_x_u, grad_x_v


def _to_hidden(e: EmbeddingSet) -> HiddenEmbeddings:
    return HiddenEmbeddings(np.hstack([e.p_u, e.m_u]), np.hstack([e.p_v, e.m_v]))


def _split_hidden(gu, gv, d) -> EmbeddingSet:
    return EmbeddingSet(gu[:, :d], gu[:, d:], gv[:, :d], gv[:, d:])


def spmp_step_u_to_v(ng: NormalizedGraph, p_u, m_u, x_v, c):
    """One U -> V propagation step on the original graph."""
    if p_u.shape != m_u.shape or p_u.shape[0] != ng.n_u:
        raise ShapeMismatch("p_u/m_u must be n_u x d")
    if x_v.shape != (ng.n_v, p_u.shape[1]):
        raise ShapeMismatch("x_v must be n_v x d")
    return _signed_step(ng.rt_pos.__matmul__, ng.rt_neg.__matmul__, p_u, m_u, c, x_v)


def spmp_step_v_to_u(ng: NormalizedGraph, p_v, m_v, x_u, c):
    """One V -> U propagation step on the original graph."""
    if p_v.shape != m_v.shape or p_v.shape[0] != ng.n_v:
        raise ShapeMismatch("p_v/m_v must be n_v x d")
    if x_u.shape != (ng.n_u, p_v.shape[1]):
        raise ShapeMismatch("x_u must be n_u x d")
    return _signed_step(ng.qt_pos.__matmul__, ng.qt_neg.__matmul__, p_v, m_v, c, x_u)


def spmp_embeddings(ng, x_u, x_v, cfg) -> EmbeddingSet:
    return _propagate(_sparse_operators(ng), x_u, x_v, cfg)


def spmp_encode(ng: NormalizedGraph, x_u, x_v, cfg: EncoderConfig) -> HiddenEmbeddings:
    return _to_hidden(spmp_embeddings(ng, x_u, x_v, cfg))


def rmp_encode(store: LowRankStore, x_u, x_v, cfg: EncoderConfig) -> HiddenEmbeddings:
    return _to_hidden(_propagate(_lowrank_operators(store), x_u, x_v, cfg))


def combine_final(h_spmp: Optional[HiddenEmbeddings], h_rmp: Optional[HiddenEmbeddings]):
    """Concatenate the two encoders' outputs, SPMP block first.

    Passing ``None`` for one side (an ablation) returns the other unchanged.
    """
    if h_spmp is None and h_rmp is None:
        raise ValueError("need at least one hidden embedding")
    if h_rmp is None:
        return h_spmp.h_u, h_spmp.h_v
    if h_spmp is None:
        return h_rmp.h_u, h_rmp.h_v
    if h_spmp.h_u.shape != h_rmp.h_u.shape or h_spmp.h_v.shape != h_rmp.h_v.shape:
        raise ShapeMismatch("encoder outputs disagree in shape")
    return np.hstack([h_spmp.h_u, h_rmp.h_u]), np.hstack([h_spmp.h_v, h_rmp.h_v])


def encode(ng: Optional[NormalizedGraph], store: Optional[LowRankStore], x_u, x_v, cfg: EncoderConfig):
    """Final representations (z_u, z_v) with width 2d per enabled encoder."""
    h_spmp = spmp_encode(ng, x_u, x_v, cfg) if cfg.use_spmp else None
    h_rmp = rmp_encode(store, x_u, x_v, cfg) if cfg.use_rmp else None
    return combine_final(h_spmp, h_rmp)


def encoder_vjp(ng: Optional[NormalizedGraph], store: Optional[LowRankStore], cfg: EncoderConfig,
                grad_z_u, grad_z_v):
    """Exact adjoint of :func:`encode`: maps dL/dZ to (dL/dX_U, dL/dX_V)."""
    width = grad_z_u.shape[1]
    if grad_z_v.shape[1] != width or width % (2 * cfg.n_encoders):
        raise ShapeMismatch(f"gradient width {width} does not fit {cfg.n_encoders} encoder(s)")
    d = width // (2 * cfg.n_encoders)
    grad_x_u = grad_x_v = 0.0
    offset = 0
    blocks = []
    if cfg.use_spmp:
        blocks.append(_sparse_operators(ng))
    if cfg.use_rmp:
        blocks.append(_lowrank_operators(store))
    for ops in blocks:
        gu = grad_z_u[:, offset:offset + 2 * d]
        gv = grad_z_v[:, offset:offset + 2 * d]
        if gu.shape[0] != ops.n_u or gv.shape[0] != ops.n_v:
            raise ShapeMismatch("gradient rows do not match the graph")
        du, dv = _propagate_adjoint(ops, _split_hidden(gu, gv, d), cfg)
        grad_x_u = grad_x_u + du
        grad_x_v = grad_x_v + dv
        offset += 2 * d
    return grad_x_u, grad_x_v
