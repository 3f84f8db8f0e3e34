"""Edge-list ingestion, seeded splits and synthetic graphs.

Canonical format: UTF-8 text, one edge per line, ``u_id<TAB>v_id<TAB>sign``
with sign 1 or -1. Lines starting with ``#`` and blank lines are skipped.
Raw ids are arbitrary strings and are remapped to contiguous indices in
order of first appearance.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DuplicatePair, EmptySplit, InvalidSign, ParseError, TooManyEdges
from .graph import SignedBiadjacency, build_graph

DEFAULT_FRACTIONS = (0.85, 0.05, 0.10)


@dataclass
class RawDataset:
    name: str
    u: np.ndarray
    v: np.ndarray
    sign: np.ndarray
    u_index: dict = field(default_factory=dict)
    v_index: dict = field(default_factory=dict)

    @property
    def n_u(self) -> int:
        return len(self.u_index)

    @property
    def n_v(self) -> int:
        return len(self.v_index)

    @property
    def n_edges(self) -> int:
        return int(self.u.size)

    def edges(self):
        return list(zip(self.u.tolist(), self.v.tolist(), self.sign.tolist()))


@dataclass
class LabeledEdges:
    u: np.ndarray
    v: np.ndarray
    label: np.ndarray  # 1 = positive sign, 0 = negative

    def __len__(self):
        return int(self.u.size)

    def signed(self):
        return zip(self.u.tolist(), self.v.tolist(), (2 * self.label - 1).tolist())


@dataclass
class EdgeSplit:
    train: LabeledEdges
    val: LabeledEdges
    test: LabeledEdges
    n_u: int
    n_v: int
    fractions: tuple = DEFAULT_FRACTIONS
    seed: int = 0


def _parse_sign(token, lineno):
    if token in ("1", "+1"):
        return 1
    if token == "-1":
        return -1
    raise InvalidSign(f"sign must be 1 or -1, got {token!r}", line=lineno)


def load_edge_list(path, format="tsv", name=None) -> RawDataset:
    """Strictly parse a signed edge list; errors carry the 1-based line number."""
    if format != "tsv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    u_index, v_index = {}, {}
    us, vs, signs = [], [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                raise ParseError(f"expected 3 tab-separated fields, got {line!r}", line=lineno)
            raw_u, raw_v, raw_sign = parts[0], parts[1], parts[2].strip()
            sign = _parse_sign(raw_sign, lineno)
            if (raw_u, raw_v) in seen:
                raise DuplicatePair(f"pair ({raw_u}, {raw_v}) repeated", line=lineno)
            seen.add((raw_u, raw_v))
            us.append(u_index.setdefault(raw_u, len(u_index)))
            vs.append(v_index.setdefault(raw_v, len(v_index)))
            signs.append(sign)
    return RawDataset(
        name=name or path.stem,
        u=np.asarray(us, dtype=np.int64),
        v=np.asarray(vs, dtype=np.int64),
        sign=np.asarray(signs, dtype=np.int64),
        u_index=u_index,
        v_index=v_index,
    )


def write_edge_list(ds: RawDataset, path):
    """Write ``ds`` in the canonical format using its raw ids."""
    u_raw = {i: raw for raw, i in ds.u_index.items()}
    v_raw = {i: raw for raw, i in ds.v_index.items()}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {ds.name}\n")
        for u, v, s in zip(ds.u.tolist(), ds.v.tolist(), ds.sign.tolist()):
            fh.write(f"{u_raw[u]}\t{v_raw[v]}\t{s}\n")


def stats(ds: RawDataset) -> dict:
    m = ds.n_edges
    n_pos = int(np.sum(ds.sign > 0))
    n_neg = m - n_pos
    return {
        "dataset": ds.name,
        "n_u": ds.n_u,
        "n_v": ds.n_v,
        "n_edges": m,
        "n_pos": n_pos,
        "n_neg": n_neg,
        "pos_fraction": n_pos / m if m else 0.0,
        "neg_fraction": n_neg / m if m else 0.0,
    }


def _labeled(ds, idx):
    return LabeledEdges(ds.u[idx], ds.v[idx], (ds.sign[idx] > 0).astype(np.int64))


def split(ds: RawDataset, fractions=DEFAULT_FRACTIONS, seed=0) -> EdgeSplit:
    """Uniform random permutation, then contiguous train/val/test slices.

    Train and val sizes are floored; the remainder goes to test.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be 3 non-negative values summing to 1, got {fractions}")
    m = ds.n_edges
    perm = np.random.default_rng(seed).permutation(m)
    n_train = math.floor(fractions[0] * m + 1e-9)
    n_val = math.floor(fractions[1] * m + 1e-9)
    return EdgeSplit(
        train=_labeled(ds, perm[:n_train]),
        val=_labeled(ds, perm[n_train:n_train + n_val]),
        test=_labeled(ds, perm[n_train + n_val:]),
        n_u=ds.n_u,
        n_v=ds.n_v,
        fractions=tuple(fractions),
        seed=seed,
    )


def training_graph(sp_: EdgeSplit, n_u=None, n_v=None) -> SignedBiadjacency:
    """Biadjacency built from training edges only; val/test never leak in."""
    if len(sp_.train) == 0:
        raise EmptySplit("training split is empty")
    n_u = sp_.n_u if n_u is None else n_u
    n_v = sp_.n_v if n_v is None else n_v
    return build_graph(sp_.train.signed(), n_u, n_v)


def _sample_pairs(rng, n_u, n_v, m):
    total = n_u * n_v
    if m > total:
        raise TooManyEdges(f"{m} edges requested but only {total} pairs exist")
    if m > total // 2:
        flat = rng.choice(total, size=m, replace=False)
    else:
        # Rejection sampling keeps memory O(m) for sparse graphs.
        chosen = np.empty(0, dtype=np.int64)
        while chosen.size < m:
            need = m - chosen.size
            draw = rng.integers(0, total, size=int(need * 1.1) + 16)
            chosen = np.concatenate([chosen, draw])
            _, first = np.unique(chosen, return_index=True)
            chosen = chosen[np.sort(first)]
        flat = chosen[:m]
    return flat // n_v, flat % n_v


def _dense_index(n):
    return {str(i): i for i in range(n)}


def synth_graph(n_u, n_v, m, pos_fraction, seed=0, name="synthetic") -> RawDataset:
    """m distinct uniform pairs, each positive with probability ``pos_fraction``."""
    rng = np.random.default_rng(seed)
    u, v = _sample_pairs(rng, n_u, n_v, m)
    sign = np.where(rng.random(m) < pos_fraction, 1, -1).astype(np.int64)
    return RawDataset(name, u.astype(np.int64), v.astype(np.int64), sign,
                      _dense_index(n_u), _dense_index(n_v))


def synth_propensity_graph(n_u, n_v, m, scale=1.5, pos_shift=0.0, seed=0, name="propensity") -> RawDataset:
    """Uniform pairs whose signs depend on hidden per-node propensities.

    Each node draws b ~ N(0, scale^2); edge (u, v) is positive with
    probability sigmoid(b_u + b_v + pos_shift). Signs are therefore
    predictable from node identity, which a learned-feature model can pick up.
    """
    rng = np.random.default_rng(seed)
    u, v = _sample_pairs(rng, n_u, n_v, m)
    b_u = rng.normal(0.0, scale, n_u)
    b_v = rng.normal(0.0, scale, n_v)
    p_pos = 1.0 / (1.0 + np.exp(-(b_u[u] + b_v[v] + pos_shift)))
    sign = np.where(rng.random(m) < p_pos, 1, -1).astype(np.int64)
    return RawDataset(name, u.astype(np.int64), v.astype(np.int64), sign,
                      _dense_index(n_u), _dense_index(n_v))
