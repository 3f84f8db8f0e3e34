"""Slow, independent oracles for testing.

Nothing here imports the sparse kernels, the randomized SVD, or the metric
implementations it is used to check. Everything is dense and written out
plainly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, ShapeMismatch, TooLarge

SVD_MAX_DIM = 200
AUC_MAX_N = 1000


@dataclass
class DenseGraph:
    """Dense per-sign matrices. ``rt_*`` is n_v x n_u, ``qt_*`` is n_u x n_v."""

    r_pos: np.ndarray
    r_neg: np.ndarray
    rt_pos: np.ndarray
    rt_neg: np.ndarray
    qt_pos: np.ndarray
    qt_neg: np.ndarray

    @classmethod
    def from_edges(cls, edges, n_u, n_v):
        r_pos = np.zeros((n_u, n_v))
        r_neg = np.zeros((n_u, n_v))
        for u, v, s in edges:
            s = getattr(s, "value", s)
            if s in (1, "+"):
                r_pos[u, v] = 1.0
            else:
                r_neg[u, v] = 1.0
        deg_u = np.zeros(n_u)
        deg_v = np.zeros(n_v)
        for u in range(n_u):
            for v in range(n_v):
                w = r_pos[u, v] + r_neg[u, v]
                deg_u[u] += w
                deg_v[v] += w
        norm_r_pos = np.zeros((n_u, n_v))
        norm_r_neg = np.zeros((n_u, n_v))
        norm_q_pos = np.zeros((n_v, n_u))
        norm_q_neg = np.zeros((n_v, n_u))
        for u in range(n_u):
            for v in range(n_v):
                if deg_u[u] > 0:
                    norm_r_pos[u, v] = r_pos[u, v] / deg_u[u]
                    norm_r_neg[u, v] = r_neg[u, v] / deg_u[u]
                if deg_v[v] > 0:
                    norm_q_pos[v, u] = r_pos[u, v] / deg_v[v]
                    norm_q_neg[v, u] = r_neg[u, v] / deg_v[v]
        return cls(r_pos, r_neg, norm_r_pos.T.copy(), norm_r_neg.T.copy(),
                   norm_q_pos.T.copy(), norm_q_neg.T.copy())

    def replaced(self, rt_pos, rt_neg, qt_pos, qt_neg):
        return DenseGraph(self.r_pos, self.r_neg, rt_pos, rt_neg, qt_pos, qt_neg)


def dense_spmp(g: DenseGraph, x_u, x_v, layers, c, weights=None):
    """Layer-by-layer recurrence with explicit dense products.

    Returns (h_u, h_v) where h = [sum_l a_l P^(l) | sum_l a_l M^(l)].
    """
    n_v, n_u = g.rt_pos.shape
    if x_u.shape[0] != n_u or x_v.shape[0] != n_v:
        raise ShapeMismatch("feature rows do not match the dense graph")
    if weights is None:
        weights = [1.0 / (layers + 1)] * (layers + 1)
    pu = [x_u]
    mu = [x_u]
    pv = [x_v]
    mv = [x_v]
    for l in range(1, layers + 1):
        pv.append((1 - c) * (g.rt_pos @ pu[l - 1] + g.rt_neg @ mu[l - 1]) + c * x_v)
        mv.append((1 - c) * (g.rt_neg @ pu[l - 1] + g.rt_pos @ mu[l - 1]))
        pu.append((1 - c) * (g.qt_pos @ pv[l - 1] + g.qt_neg @ mv[l - 1]) + c * x_u)
        mu.append((1 - c) * (g.qt_neg @ pv[l - 1] + g.qt_pos @ mv[l - 1]))
    agg = lambda seq: sum(w * s for w, s in zip(weights, seq))
    h_u = np.concatenate([agg(pu), agg(mu)], axis=1)
    h_v = np.concatenate([agg(pv), agg(mv)], axis=1)
    return h_u, h_v


def _orthonormal_complement(basis, count, rng):
    """Extend orthonormal columns ``basis`` by ``count`` more via Gram-Schmidt."""
    rows = basis.shape[0]
    cols = [basis[:, i] for i in range(basis.shape[1])]
    while len(cols) < basis.shape[1] + count:
        w = rng.standard_normal(rows)
        for _ in range(2):
            for q in cols:
                w = w - (q @ w) * q
        norm = np.sqrt(w @ w)
        if norm > 1e-8:
            cols.append(w / norm)
    return np.column_stack(cols) if cols else np.zeros((rows, 0))


def dense_exact_svd(a, tol=1e-15, max_sweeps=100):
    """Thin SVD by one-sided Jacobi rotations.

    Returns (u, sigma, v) with sigma descending and a = u @ diag(sigma) @ v.T.
    """
    a = np.array(a, dtype=np.float64)
    if max(a.shape) > SVD_MAX_DIM:
        raise TooLarge(f"oracle SVD capped at {SVD_MAX_DIM} per side, got {a.shape}")
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T.copy()
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = w[:, i] @ w[:, i]
                beta = w[:, j] @ w[:, j]
                gamma = w[:, i] @ w[:, j]
                if abs(gamma) <= tol * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                wi, wj = w[:, i].copy(), w[:, j].copy()
                w[:, i] = cs * wi - sn * wj
                w[:, j] = sn * wi + cs * wj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i] = cs * vi - sn * vj
                v[:, j] = sn * vi + cs * vj
        if not rotated:
            break
    sigma = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]
    scale = sigma.max() if sigma.size else 0.0
    nonzero = sigma > 1e-13 * max(scale, 1.0)
    u = w[:, nonzero] / sigma[nonzero]
    u = _orthonormal_complement(u, n - u.shape[1], np.random.default_rng(0))
    sigma = np.where(nonzero, sigma, 0.0)
    if transposed:
        return v, sigma, u
    return u, sigma, v


def truncate(u, sigma, v, k):
    return (u[:, :k] * sigma[:k]) @ v[:, :k].T


def finite_diff_grad(loss_fn, theta0, step=1e-5, coords=None):
    """Central differences of a scalar function.

    With ``coords`` given, only those flat indices are probed and a
    ``{index: estimate}`` dict is returned; otherwise a full gradient array.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    probe = range(theta0.size) if coords is None else coords
    grad = {}
    for i in probe:
        plus = theta0.copy()
        minus = theta0.copy()
        plus.flat[i] += step
        minus.flat[i] -= step
        grad[i] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * step)
    if coords is None:
        return np.array([grad[i] for i in range(theta0.size)]).reshape(theta0.shape)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def pairwise_auc(scores, labels):
    """O(n^2) AUC: fraction of (positive, negative) pairs ranked correctly, ties = 1/2."""
    scores = [float(s) for s in scores]
    labels = [int(y) for y in labels]
    if len(scores) > AUC_MAX_N:
        raise TooLarge(f"pairwise AUC capped at {AUC_MAX_N} items")
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    if not pos or not neg:
        raise DegenerateLabels("need both classes")
    credit = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                credit += 1.0
            elif p == n:
                credit += 0.5
    return credit / (len(pos) * len(neg))


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def dense_model_loss(g: DenseGraph, x_u, x_v, w1, b1, w2, b2, edges_u, edges_v, labels,
                     layers, c, weight_decay, low_rank=None, use_spmp=True):
    """Regularized BCE of the full model, computed densely from scratch.

    ``low_rank`` optionally holds dense reconstructed operators
    (rt_pos, rt_neg, qt_pos, qt_neg) for the second encoder.
    """
    blocks_u, blocks_v = [], []
    if use_spmp:
        h_u, h_v = dense_spmp(g, x_u, x_v, layers, c)
        blocks_u.append(h_u)
        blocks_v.append(h_v)
    if low_rank is not None:
        h_u, h_v = dense_spmp(g.replaced(*low_rank), x_u, x_v, layers, c)
        blocks_u.append(h_u)
        blocks_v.append(h_v)
    z_u = np.concatenate(blocks_u, axis=1)
    z_v = np.concatenate(blocks_v, axis=1)
    total = 0.0
    for u, v, y in zip(edges_u, edges_v, labels):
        inp = np.concatenate([z_u[u], z_v[v]])
        hidden = np.maximum(inp @ w1 + b1, 0.0)
        p = sigmoid(hidden @ w2[:, 0] + b2[0])
        total += -(y * np.log(p) + (1 - y) * np.log(1 - p))
    reg = sum(np.sum(t * t) for t in (x_u, x_v, w1, b1, w2, b2))
    return total / len(labels) + weight_decay * reg
