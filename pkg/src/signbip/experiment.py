"""Multi-seed training, grid sweeps and scaling benchmarks.

These drive the model the same way the command line does; the CLI adds file
output and exit codes on top.
"""

import itertools
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import lowrank
from .data import RawDataset, split, synth_graph, training_graph
from .encoder import encode
from .graph import build_graph, normalize
from .model import (
    INJECTION_GRID,
    LAYER_GRID,
    RANK_GRID,
    SELECT_METRICS,
    AdamState,
    HyperParams,
    TrainedModel,
    adam_step,
    backward,
    bce_loss,
    fit,
    init_params,
    scatter_matrix,
    score_forward,
)

log = logging.getLogger(__name__)

REPORT_FIELDS = ("auc", "binary_f1", "macro_f1", "micro_f1")


@dataclass
class SeedResult:
    seed: int
    model: Optional[TrainedModel]
    test: dict  # metric name -> EvalReport at that metric's snapshot
    val: dict  # metric name -> best validation score
    error: Optional[str] = None


def summarize(reports):
    """Mean and population std of each metric over a list of EvalReports."""
    out = {}
    for name in REPORT_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = (float(values.mean()), float(values.std())) if values.size else (math.nan, math.nan)
    return out


def train_one(ds: RawDataset, hp: HyperParams, seed: int, store=None, svd_cache_dir=None,
              keep_model=True) -> SeedResult:
    hp = replace(hp, seed=seed)
    sp_ = split(ds, seed=seed)
    trained = fit(sp_, hp, svd_cache_dir=svd_cache_dir, store=store)
    test = {metric: trained.evaluate(sp_.test, metric) for metric in SELECT_METRICS}
    val = {metric: snap.val_score for metric, snap in trained.snapshots.items()}
    return SeedResult(seed, trained if keep_model else None, test, val)


def train_seeds(ds: RawDataset, hp: HyperParams, seeds, svd_cache_dir=None, keep_going=False):
    results = []
    for seed in seeds:
        try:
            results.append(train_one(ds, hp, seed, svd_cache_dir=svd_cache_dir))
        except Exception as exc:  # noqa: BLE001 - recorded per seed when keep_going
            if not keep_going:
                raise
            log.error("seed %d failed: %s", seed, exc)
            results.append(SeedResult(seed, None, {}, {}, error=str(exc)))
    return results


# -- sweep -------------------------------------------------------------------

@dataclass
class GridCell:
    rank_ratio: float
    injection_ratio: float
    layers: int
    seed: int
    val: dict
    test: dict
    error: Optional[str] = None


@dataclass
class SweepResult:
    cells: list
    selected: dict = field(default_factory=dict)  # metric -> (rank_ratio, injection_ratio, layers)

    def cells_for(self, config):
        r, c, layers = config
        return [x for x in self.cells
                if (x.rank_ratio, x.injection_ratio, x.layers) == (r, c, layers) and x.error is None]

    def mean_val(self, config, metric):
        vals = [x.val[metric] for x in self.cells_for(config)]
        vals = [v for v in vals if math.isfinite(v)]
        return statistics.fmean(vals) if vals else -math.inf

    def test_reports(self, metric):
        return [x.test[metric] for x in self.cells_for(self.selected[metric])]

    def test_summary(self, metric):
        return summarize(self.test_reports(metric))


def _sweep_group(args):
    """All (c, L) cells that share one split and one SVD (fixed seed and r)."""
    ds, base, seed, r, injections, layer_grid = args
    sp_ = split(ds, seed=seed)
    hp0 = replace(base, seed=seed, rank_ratio=r)
    store = None
    if hp0.use_rmp:
        ng = normalize(training_graph(sp_))
        store = lowrank.preprocess(ng, lowrank.target_rank(sp_.n_u, sp_.n_v, r), seed=seed)
    cells = []
    for c, layers in itertools.product(injections, layer_grid):
        hp = replace(hp0, injection_ratio=c, layers=layers)
        try:
            trained = fit(sp_, hp, store=store)
            test = {m: trained.evaluate(sp_.test, m) for m in SELECT_METRICS}
            val = {m: s.val_score for m, s in trained.snapshots.items()}
            cells.append(GridCell(r, c, layers, seed, val, test))
        except Exception as exc:  # noqa: BLE001 - failed cells are recorded, sweep continues
            log.error("cell r=%s c=%s L=%s seed=%s failed: %s", r, c, layers, seed, exc)
            cells.append(GridCell(r, c, layers, seed, {}, {}, error=str(exc)))
    return cells


def sweep(ds: RawDataset, base: HyperParams, seeds, rank_grid=RANK_GRID,
          injection_grid=INJECTION_GRID, layer_grid=LAYER_GRID, workers=1) -> SweepResult:
    """Grid search; each metric selects the config with the best mean validation score."""
    rank_grid = list(rank_grid) if base.use_rmp else [base.rank_ratio]
    jobs = [(ds, base, seed, r, list(injection_grid), list(layer_grid))
            for seed in seeds for r in rank_grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_sweep_group, jobs))
    else:
        groups = [_sweep_group(job) for job in jobs]
    result = SweepResult([cell for group in groups for cell in group])
    configs = list(itertools.product(rank_grid, injection_grid, layer_grid))
    for metric in SELECT_METRICS:
        # Ties go to the first config in grid order.
        result.selected[metric] = max(configs, key=lambda cfg: result.mean_val(cfg, metric))
    return result


# -- scaling benchmark -------------------------------------------------------

@dataclass
class BenchRow:
    m: int
    n_u: int
    n_v: int
    k: int
    preprocess_seconds: float
    forward_seconds: float
    backward_seconds: float
    epoch_seconds: float


class _BenchCase:
    """One synthetic graph with its SVD, parameters and optimizer, ready to time."""

    def __init__(self, m, avg_degree, layers, final_dim, k, seed):
        n = max(k, int(round(m / avg_degree)))
        self.ds = synth_graph(n, n, m, 0.8, seed=seed)
        self.labels = (self.ds.sign > 0).astype(np.int64)
        self.hp = HyperParams(final_dim=final_dim, layers=layers, seed=seed)
        self.cfg = self.hp.encoder_config()
        self.ng = normalize(_full_graph(self.ds))
        self.m, self.n, self.k = m, n, k

        t0 = time.perf_counter()
        self.store = lowrank.preprocess(self.ng, k, seed=seed)
        self.preprocess_seconds = time.perf_counter() - t0

        self.params = init_params(n, n, self.hp.embed_dim, self.hp.mlp_hidden, seed, self.hp.n_encoders)
        self.state = AdamState.zeros_like(self.params)
        self.s_u = scatter_matrix(self.ds.u, n)
        self.s_v = scatter_matrix(self.ds.v, n)
        self.fwd, self.bwd, self.total = [], [], []

    def epoch(self):
        p, ds = self.params, self.ds
        t0 = time.perf_counter()
        z_u, z_v = encode(self.ng, self.store, p.x_u, p.x_v, self.cfg)
        cache = score_forward(z_u, z_v, ds.u, ds.v, p)
        bce_loss(cache.scores, self.labels)
        t1 = time.perf_counter()
        grads = backward(cache, self.labels, self.ng, self.store, self.cfg, p, self.hp.weight_decay,
                         self.n, self.n, self.s_u, self.s_v)
        adam_step(p, grads, self.state, self.hp.learning_rate)
        t2 = time.perf_counter()
        self.fwd.append(t1 - t0)
        self.bwd.append(t2 - t1)
        self.total.append(t2 - t0)

    def row(self) -> BenchRow:
        return BenchRow(self.m, self.n, self.n, self.k, self.preprocess_seconds,
                        min(self.fwd), min(self.bwd), min(self.total))


def _full_graph(ds: RawDataset):
    return build_graph(zip(ds.u.tolist(), ds.v.tolist(), ds.sign.tolist()), ds.n_u, ds.n_v)


def bench(sizes, avg_degree=4.0, layers=3, final_dim=32, k=32, epochs=9, seed=0):
    """Time SVD preprocessing and full-batch training epochs on synthetic graphs.

    Node counts grow with m (fixed average degree per node side). Epoch time
    covers encoding, scoring, backward and the Adam step; SVD time is separate.
    Epochs are run round-robin across sizes so slow periods on a shared
    machine hit every size alike, and each size reports its fastest epoch.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("benchmark sizes must be ascending")
    cases = [_BenchCase(m, avg_degree, layers, final_dim, k, seed) for m in sizes]
    for _ in range(epochs):
        for case in cases:
            case.epoch()
    return [case.row() for case in cases]


def bench_size(m, **kwargs) -> BenchRow:
    return bench([m], **kwargs)[0]


def epoch_ratios(rows):
    return [b.epoch_seconds / a.epoch_seconds for a, b in zip(rows, rows[1:])]
