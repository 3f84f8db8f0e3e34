"""Rank-k truncated SVD of the normalized operators, applied without densifying.

Factors are computed once on the training graph with a seeded randomized
range finder and reused for every epoch.
"""

import hashlib
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidRatio, MissingFactors, RankTooLarge, ShapeMismatch
from .graph import NormalizedGraph

# Operator identifiers, in the fixed order used by the on-disk cache.
RT_POS = "RT_pos"
RT_NEG = "RT_neg"
QT_POS = "QT_pos"
QT_NEG = "QT_neg"
KEYS = (RT_POS, RT_NEG, QT_POS, QT_NEG)

DEFAULT_OVERSAMPLE = 10
DEFAULT_POWER_ITERS = 2

_MAGIC = b"SVDF"
_VERSION = 1
_HEADER = struct.Struct("<4sIqqq")


@dataclass(frozen=True)
class SvdFactors:
    """A ~= u_mat @ diag(sigma) @ v_mat.T with orthonormal factor columns."""

    u_mat: np.ndarray
    sigma: np.ndarray
    v_mat: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    @property
    def shape(self):
        return self.u_mat.shape[0], self.v_mat.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.u_mat * self.sigma) @ self.v_mat.T


@dataclass(frozen=True)
class LowRankStore:
    factors: dict
    rank: int

    def __getitem__(self, key) -> SvdFactors:
        try:
            return self.factors[key]
        except KeyError:
            raise MissingFactors(f"no factors stored for {key!r}") from None

    def __contains__(self, key):
        return key in self.factors


def target_rank(n_u: int, n_v: int, r: float) -> int:
    """k = floor(min(n_u, n_v) * r), clamped to [1, min(n_u, n_v)]."""
    if not 0.0 < r < 1.0:
        raise InvalidRatio(f"rank ratio must lie in (0, 1), got {r}")
    smaller = min(n_u, n_v)
    if smaller < 1:
        raise InvalidRatio("both node parts must be non-empty")
    # Guard against 0.1 * 180 = 17.999999999999996 style float truncation.
    k = math.floor(smaller * r + 1e-9)
    return min(max(1, k), smaller)


def randomized_svd(a, k, oversample=DEFAULT_OVERSAMPLE,
                   power_iters=DEFAULT_POWER_ITERS, seed=0) -> SvdFactors:
    """Randomized truncated SVD with a Gaussian test matrix and power iterations.

    ``a`` may be a scipy sparse matrix or a dense array. When the sketch width
    k + oversample reaches min(a.shape) the range is captured exactly and the
    result equals the optimal rank-k truncation up to rounding.
    """
    rows, cols = a.shape
    if k < 1 or k > min(rows, cols):
        raise RankTooLarge(f"k={k} not in [1, {min(rows, cols)}] for shape {a.shape}")
    if oversample < 0:
        raise ValueError("oversample must be non-negative")
    if sp.issparse(a):
        a = a.tocsr()
        a_t = a.transpose().tocsr()
    else:
        a = np.asarray(a, dtype=np.float64)
        a_t = a.T

    width = min(k + oversample, rows, cols)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((cols, width))
    q, _ = np.linalg.qr(a @ omega)
    for _ in range(power_iters):
        w, _ = np.linalg.qr(a_t @ q)
        q, _ = np.linalg.qr(a @ w)

    # B = Q^T A, formed as (A^T Q)^T to keep the sparse product on the left.
    b = np.asarray(a_t @ q).T
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u_mat = np.ascontiguousarray(q @ ub[:, :k])
    v_mat = np.ascontiguousarray(vt[:k].T)
    return SvdFactors(u_mat, np.ascontiguousarray(s[:k]), v_mat)


def _operators(ng: NormalizedGraph):
    return {RT_POS: ng.rt_pos, RT_NEG: ng.rt_neg, QT_POS: ng.qt_pos, QT_NEG: ng.qt_neg}


def preprocess(ng: NormalizedGraph, k: int, seed: int = 0,
               oversample=DEFAULT_OVERSAMPLE, power_iters=DEFAULT_POWER_ITERS) -> LowRankStore:
    """Factor all four transposed normalized matrices at a shared rank k."""
    factors = {
        key: randomized_svd(mat, k, oversample, power_iters, seed=seed + i)
        for i, (key, mat) in enumerate(_operators(ng).items())
    }
    return LowRankStore(factors, k)


def rmp_apply(f: SvdFactors, x: np.ndarray) -> np.ndarray:
    """U (Sigma (V^T x)), never forming the dense product."""
    if x.shape[0] != f.v_mat.shape[0]:
        raise ShapeMismatch(f"x has {x.shape[0]} rows, factors expect {f.v_mat.shape[0]}")
    return f.u_mat @ (f.sigma[:, None] * (f.v_mat.T @ x))


def rmp_apply_adjoint(f: SvdFactors, g: np.ndarray) -> np.ndarray:
    """V (Sigma (U^T g)), the transpose of :func:`rmp_apply`."""
    if g.shape[0] != f.u_mat.shape[0]:
        raise ShapeMismatch(f"g has {g.shape[0]} rows, factors expect {f.u_mat.shape[0]}")
    return f.v_mat @ (f.sigma[:, None] * (f.u_mat.T @ g))


# -- on-disk cache -----------------------------------------------------------

def graph_digest(ng: NormalizedGraph) -> str:
    h = hashlib.sha256()
    for mat in _operators(ng).values():
        h.update(np.asarray(mat.shape, dtype=np.int64).tobytes())
        h.update(mat.indptr.astype(np.int64).tobytes())
        h.update(mat.indices.astype(np.int64).tobytes())
        h.update(mat.data.astype(np.float64).tobytes())
    return h.hexdigest()[:16]


def write_factors(fh, f: SvdFactors):
    rows, cols = f.shape
    fh.write(_HEADER.pack(_MAGIC, _VERSION, rows, cols, f.rank))
    for arr in (f.u_mat, f.sigma, f.v_mat):
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_factors(fh) -> SvdFactors:
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError("truncated factor header")
    magic, version, rows, cols, k = _HEADER.unpack(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"not a factor record (magic={magic!r}, version={version})")

    def take(count, shape):
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError("truncated factor payload")
        return np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)

    u_mat = take(rows * k, (rows, k))
    sigma = take(k, (k,))
    v_mat = take(cols * k, (cols, k))
    return SvdFactors(u_mat, sigma, v_mat)


def cache_path(cache_dir, digest: str, k: int, seed: int) -> Path:
    return Path(cache_dir) / f"svd_{digest}_k{k}_s{seed}.bin"


def save_store(store: LowRankStore, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        for key in KEYS:
            write_factors(fh, store[key])
    os.replace(tmp, path)


def load_store(path) -> LowRankStore:
    with open(path, "rb") as fh:
        factors = {key: read_factors(fh) for key in KEYS}
    ranks = {f.rank for f in factors.values()}
    if len(ranks) != 1:
        raise ValueError(f"inconsistent ranks in {path}: {sorted(ranks)}")
    return LowRankStore(factors, ranks.pop())


def cached_preprocess(ng: NormalizedGraph, k: int, seed: int = 0, cache_dir=None) -> LowRankStore:
    """:func:`preprocess`, reading and writing the factor cache when a directory is given."""
    if cache_dir is None:
        return preprocess(ng, k, seed)
    path = cache_path(cache_dir, graph_digest(ng), k, seed)
    if path.exists():
        return load_store(path)
    store = preprocess(ng, k, seed)
    Path(cache_dir).mkdir(parents=True, exist_ok=True)
    save_store(store, path)
    return store
