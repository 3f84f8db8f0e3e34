"""Signed biadjacency matrices and their semi-normalized transposes.

A signed bipartite graph has node parts U and V and edges (u, v, sign).
Positive and negative edges live in separate 0/1 CSR matrices so that the
propagation code never branches on sign.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import DuplicateEdge, IndexOutOfRange


class Sign(Enum):
    POSITIVE = 1
    NEGATIVE = -1

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        if value in ("+", 1, True):
            return cls.POSITIVE
        if value in ("-", -1):
            return cls.NEGATIVE
        raise ValueError(f"not a sign: {value!r}")


class SignedEdge(NamedTuple):
    u: int
    v: int
    sign: Sign


@dataclass(frozen=True)
class SignedBiadjacency:
    """Per-sign 0/1 biadjacency matrices.

    ``r_pos``/``r_neg`` map U to V (shape n_u x n_v); ``q_pos``/``q_neg`` are
    their transposes (V to U).
    """

    n_u: int
    n_v: int
    r_pos: sp.csr_matrix
    r_neg: sp.csr_matrix
    q_pos: sp.csr_matrix
    q_neg: sp.csr_matrix

    @property
    def n_edges(self) -> int:
        return self.r_pos.nnz + self.r_neg.nnz


@dataclass(frozen=True)
class NormalizedGraph:
    """Transposed row-semi-normalized operators.

    ``rt_s`` is (D_U^-1 R^s)^T with shape n_v x n_u and ``qt_s`` is
    (D_V^-1 Q^s)^T with shape n_u x n_v. The ``*_norm`` fields hold the plain
    (untransposed) normalized matrices, used by the backward pass.
    """

    rt_pos: sp.csr_matrix
    rt_neg: sp.csr_matrix
    qt_pos: sp.csr_matrix
    qt_neg: sp.csr_matrix
    r_pos_norm: sp.csr_matrix
    r_neg_norm: sp.csr_matrix
    q_pos_norm: sp.csr_matrix
    q_neg_norm: sp.csr_matrix
    degrees_u: np.ndarray
    degrees_v: np.ndarray

    @property
    def n_u(self) -> int:
        return self.rt_pos.shape[1]

    @property
    def n_v(self) -> int:
        return self.rt_pos.shape[0]


def _zero_one_csr(rows, cols, shape):
    data = np.ones(len(rows), dtype=np.float64)
    mat = sp.csr_matrix((data, (rows, cols)), shape=shape)
    mat.sort_indices()
    return mat


def build_graph(edges: Iterable, n_u: int, n_v: int) -> SignedBiadjacency:
    """Materialize the four signed biadjacency matrices from an edge list.

    Edges may be ``SignedEdge`` values or plain ``(u, v, sign)`` tuples where
    sign is a ``Sign``, ``+1``/``-1`` or ``"+"``/``"-"``.
    """
    pos_u, pos_v, neg_u, neg_v = [], [], [], []
    seen = set()
    for u, v, sign in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n_u and 0 <= v < n_v):
            raise IndexOutOfRange(f"edge ({u}, {v}) outside {n_u}x{n_v}")
        if (u, v) in seen:
            raise DuplicateEdge(f"pair ({u}, {v}) appears more than once")
        seen.add((u, v))
        if Sign.coerce(sign) is Sign.POSITIVE:
            pos_u.append(u)
            pos_v.append(v)
        else:
            neg_u.append(u)
            neg_v.append(v)

    r_pos = _zero_one_csr(pos_u, pos_v, (n_u, n_v))
    r_neg = _zero_one_csr(neg_u, neg_v, (n_u, n_v))
    # Q is derived by transposition so the two views can never disagree.
    q_pos = r_pos.transpose().tocsr()
    q_neg = r_neg.transpose().tocsr()
    q_pos.sort_indices()
    q_neg.sort_indices()
    return SignedBiadjacency(n_u, n_v, r_pos, r_neg, q_pos, q_neg)


def _inverse_degrees(deg):
    inv = np.zeros(deg.shape, dtype=np.float64)
    nz = deg > 0
    inv[nz] = 1.0 / deg[nz]
    return inv


def normalize(g: SignedBiadjacency) -> NormalizedGraph:
    """Divide each row by the node's total degree over both signs.

    Isolated nodes get an all-zero row (1/0 is taken as 0).
    """
    deg_u = np.asarray((g.r_pos + g.r_neg).sum(axis=1)).ravel()
    deg_v = np.asarray((g.q_pos + g.q_neg).sum(axis=1)).ravel()
    inv_u = sp.diags(_inverse_degrees(deg_u))
    inv_v = sp.diags(_inverse_degrees(deg_v))

    def pair(mat, inv_deg):
        norm = (inv_deg @ mat).tocsr()
        norm.sort_indices()
        norm_t = norm.transpose().tocsr()
        norm_t.sort_indices()
        return norm_t, norm

    rt_pos, r_pos_norm = pair(g.r_pos, inv_u)
    rt_neg, r_neg_norm = pair(g.r_neg, inv_u)
    qt_pos, q_pos_norm = pair(g.q_pos, inv_v)
    qt_neg, q_neg_norm = pair(g.q_neg, inv_v)
    return NormalizedGraph(
        rt_pos=rt_pos,
        rt_neg=rt_neg,
        qt_pos=qt_pos,
        qt_neg=qt_neg,
        r_pos_norm=r_pos_norm,
        r_neg_norm=r_neg_norm,
        q_pos_norm=q_pos_norm,
        q_neg_norm=q_neg_norm,
        degrees_u=deg_u.astype(np.int64),
        degrees_v=deg_v.astype(np.int64),
    )
