import math

import numpy as np
import pytest

from signbip.data import split, synth_propensity_graph
from signbip.encoder import EncoderConfig, encode
from signbip.errors import EmptyBatch, EmptySplit, IndexOutOfRange, NumericFailure, ShapeMismatch
from signbip.lowrank import KEYS, preprocess
from signbip.model import (
    AdamState,
    HyperParams,
    ModelParams,
    adam_step,
    backward,
    bce_loss,
    fit,
    init_params,
    read_checkpoint,
    score_edges,
    score_forward,
    total_loss,
    write_checkpoint,
)
from signbip.reference import DenseGraph, dense_model_loss, finite_diff_grad, relative_error

from conftest import random_graph


def _zeros_like(params):
    return ModelParams(*(np.zeros_like(a) for _, a in params.items()))


# -- parameters and scoring --------------------------------------------------

def test_init_deterministic_and_widths():
    a = init_params(5, 4, 8, 32, seed=3)
    b = init_params(5, 4, 8, 32, seed=3)
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.items(), b.items()))
    assert a.w1.shape == (64, 32)
    assert init_params(5, 4, 16, 32, n_encoders=1).w1.shape == (64, 32)
    assert not a.b1.any() and not a.b2.any()


def test_flatten_round_trip(rng):
    p = init_params(3, 2, 2, 4, seed=1)
    q = p.unflatten(p.flatten())
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(p.items(), q.items()))


def test_zero_mlp_scores_half(rng):
    p = _zeros_like(init_params(4, 3, 2, 5))
    z_u, z_v = rng.standard_normal((4, 8)), rng.standard_normal((3, 8))
    scores = score_edges(z_u, z_v, [(0, 0), (3, 2), (1, 1)], p)
    assert np.array_equal(scores, [0.5, 0.5, 0.5])


def test_hand_computed_score():
    p = ModelParams(np.zeros((1, 1)), np.zeros((1, 1)), np.array([[1.0, -1.0], [2.0, 0.5]]),
                    np.array([0.1, 0.2]), np.array([[1.5], [-2.0]]), np.array([0.3]))
    z_u, z_v = np.array([[0.4]]), np.array([[-0.2]])
    # pre = [0.4 - 0.4 + 0.1, -0.4 - 0.1 + 0.2] = [0.1, -0.3]; relu -> [0.1, 0]
    logit = 1.5 * 0.1 + 0.3
    expected = 1.0 / (1.0 + math.exp(-logit))
    assert abs(score_edges(z_u, z_v, [(0, 0)], p)[0] - expected) < 1e-12


def test_score_errors(rng):
    p = init_params(2, 2, 1, 3, n_encoders=1)
    z = rng.standard_normal((2, 2))
    with pytest.raises(IndexOutOfRange):
        score_edges(z, z, [(2, 0)], p)
    with pytest.raises(ShapeMismatch):
        score_edges(z[:, :1], z[:, :1], [(0, 0)], p)


# -- loss --------------------------------------------------------------------

def test_bce_examples():
    assert abs(bce_loss(np.full(7, 0.5), np.array([1, 0, 1, 1, 0, 0, 1])) - math.log(2)) < 1e-12
    assert bce_loss(np.array([0.9]), np.array([1])) == pytest.approx(0.105361, abs=1e-6)
    confident = bce_loss(np.array([1.0, 0.0]), np.array([1, 0]))
    assert 0 <= confident < 1e-11
    wrong = bce_loss(np.array([0.0, 1.0]), np.array([1, 0]))
    assert math.isfinite(wrong) and wrong == pytest.approx(-math.log(1e-12), rel=1e-4)
    with pytest.raises(EmptyBatch):
        bce_loss(np.array([]), np.array([]))


def test_total_loss_examples(rng):
    p = init_params(3, 2, 2, 4, seed=0)
    assert total_loss(0.7, p, 0.0) == 0.7
    assert total_loss(0.7, _zeros_like(p), 1e-5) == 0.7
    # Sum of squares 4.0: a single 2 in b2, everything else zero.
    q = _zeros_like(p)
    q.b2[0] = 2.0
    assert total_loss(0.7, q, 1e-5) == pytest.approx(0.70004, abs=1e-15)


# -- gradients ---------------------------------------------------------------

def _full_model_case(seed, use_rmp=True):
    rng = np.random.default_rng(seed)
    n_u, n_v = (int(n) for n in rng.integers(3, 11, size=2))
    edges, ng = random_graph(rng, n_u, n_v, int(rng.integers(4, n_u * n_v + 1)))
    k = int(rng.integers(1, min(n_u, n_v) + 1))
    store = preprocess(ng, k, seed=seed) if use_rmp else None
    cfg = EncoderConfig(layers=int(rng.integers(0, 4)), injection_ratio=float(rng.uniform(0.05, 0.95)),
                        use_rmp=use_rmp)
    params = init_params(n_u, n_v, 2, 5, seed=seed, n_encoders=cfg.n_encoders)
    params.b1[:] = rng.normal(0, 0.1, params.b1.shape)
    params.b2[:] = rng.normal(0, 0.1, 1)
    u = np.array([e[0] for e in edges])
    v = np.array([e[1] for e in edges])
    labels = np.array([int(e[2] > 0) for e in edges])
    dense = DenseGraph.from_edges(edges, n_u, n_v)
    low = [store[key].reconstruct() for key in KEYS] if use_rmp else None
    return ng, store, cfg, params, u, v, labels, dense, low


def _dense_loss_fn(params, dense, low, cfg, u, v, labels, wd):
    def fn(theta):
        p = params.unflatten(theta)
        return dense_model_loss(dense, p.x_u, p.x_v, p.w1, p.b1, p.w2, p.b2, u, v, labels,
                                cfg.layers, cfg.injection_ratio, wd, low_rank=low,
                                use_spmp=cfg.use_spmp)
    return fn


def full_model_gradient_error(seed, wd=1e-3, use_rmp=True):
    """Max relative error between backward() and central differences of the dense oracle."""
    ng, store, cfg, params, u, v, labels, dense, low = _full_model_case(seed, use_rmp)
    z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
    cache = score_forward(z_u, z_v, u, v, params)
    grads = backward(cache, labels, ng, store, cfg, params, wd)
    fn = _dense_loss_fn(params, dense, low, cfg, u, v, labels, wd)
    numeric = finite_diff_grad(fn, params.flatten(), step=1e-5)
    return float(relative_error(numeric, grads.flatten()).max())


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    assert full_model_gradient_error(seed) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_gradient_single_encoder(seed):
    assert full_model_gradient_error(100 + seed, use_rmp=False) < 1e-4


def test_production_loss_matches_dense_oracle():
    ng, store, cfg, params, u, v, labels, dense, low = _full_model_case(7)
    z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
    scores = score_forward(z_u, z_v, u, v, params).scores
    ours = total_loss(bce_loss(scores, labels), params, 1e-3)
    oracle = _dense_loss_fn(params, dense, low, cfg, u, v, labels, 1e-3)(params.flatten())
    assert abs(ours - oracle) < 1e-10


def test_gradient_ten_probes_six_nodes(rng):
    edges, ng = random_graph(rng, 3, 3, 7)
    store = preprocess(ng, 2, seed=0)
    cfg = EncoderConfig(layers=2)
    params = init_params(3, 3, 2, 4, seed=5)
    u = np.array([e[0] for e in edges])
    v = np.array([e[1] for e in edges])
    labels = np.array([int(e[2] > 0) for e in edges])
    z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
    grads = backward(score_forward(z_u, z_v, u, v, params), labels, ng, store, cfg, params, 1e-5).flatten()
    fn = _dense_loss_fn(params, DenseGraph.from_edges(edges, 3, 3),
                        [store[k].reconstruct() for k in KEYS], cfg, u, v, labels, 1e-5)
    coords = rng.choice(grads.size, size=10, replace=False).tolist()
    numeric = finite_diff_grad(fn, params.flatten(), step=1e-5, coords=coords)
    for i in coords:
        assert relative_error(numeric[i], grads[i]) < 1e-4


def _zero_data_gradient(rng, wd):
    _, ng = random_graph(rng, 4, 3, 8)
    store = preprocess(ng, 2)
    cfg = EncoderConfig()
    params = init_params(4, 3, 2, 4, seed=1)
    u, v = np.array([0, 1, 3]), np.array([0, 2, 1])
    z_u, z_v = encode(ng, store, params.x_u, params.x_v, cfg)
    cache = score_forward(z_u, z_v, u, v, params)
    # Labels equal to the predictions give an exactly zero data gradient.
    return backward(cache, cache.scores.copy(), ng, store, cfg, params, wd), params


def test_zero_data_gradient_and_no_decay(rng):
    grads, _ = _zero_data_gradient(rng, 0.0)
    assert not np.any(grads.x_u) and not np.any(grads.x_v) and not np.any(grads.w1)


def test_regularizer_gradient_is_exact(rng):
    grads, params = _zero_data_gradient(rng, 0.25)
    for (_, g), (_, p) in zip(grads.items(), params.items()):
        assert np.array_equal(g, 2 * 0.25 * p)


def test_regularization_pull(rng):
    params = init_params(6, 5, 2, 4, seed=2)
    params.b1[:] = 0.3
    state = AdamState.zeros_like(params)
    norms = [math.sqrt(params.sum_of_squares())]
    for _ in range(100):
        grads = ModelParams(*(2 * 1e-2 * a for _, a in params.items()))
        adam_step(params, grads, state, 1e-3)
        norms.append(math.sqrt(params.sum_of_squares()))
    assert all(b < a for a, b in zip(norms, norms[1:]))


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient():
    p = init_params(3, 2, 2, 4, seed=0)
    before = p.copy()
    adam_step(p, _zeros_like(p), AdamState.zeros_like(p), 0.1)
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(p.items(), before.items()))


def test_adam_first_step_closed_form(rng):
    p = init_params(3, 2, 2, 4, seed=0)
    before = p.copy()
    g = ModelParams(*(rng.standard_normal(a.shape) for _, a in p.items()))
    adam_step(p, g, AdamState.zeros_like(p), 0.01)
    for (_, new), (_, old), (_, grad) in zip(p.items(), before.items(), g.items()):
        np.testing.assert_allclose(new - old, -0.01 * grad / (np.abs(grad) + 1e-8), atol=1e-15)


def test_adam_constant_gradient_step_size():
    p = init_params(2, 2, 1, 2, seed=0)
    g = ModelParams(*(np.full(a.shape, 3.7) for _, a in p.items()))
    state = AdamState.zeros_like(p)
    for _ in range(500):
        before = p.w1.copy()
        adam_step(p, g, state, 1e-3)
    np.testing.assert_allclose(before - p.w1, 1e-3, rtol=1e-6)


# -- training ----------------------------------------------------------------

def _small_split(seed=0, m=400):
    ds = synth_propensity_graph(40, 30, m, seed=seed)
    return split(ds, seed=seed)


def test_fit_deterministic():
    sp_ = _small_split()
    hp = HyperParams(epochs=15, rank_ratio=0.2, learning_rate=5e-3, seed=3)
    a = fit(sp_, hp)
    b = fit(sp_, hp)
    assert [r.train_loss for r in a.log] == [r.train_loss for r in b.log]
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(a.params.items(), b.params.items()))


def test_fit_learns_and_snapshots():
    sp_ = _small_split(m=1000)
    hp = HyperParams(epochs=60, rank_ratio=0.2, learning_rate=1e-2, seed=0)
    trained = fit(sp_, hp)
    assert len(trained.log) == 60
    assert trained.log[-1].train_loss < trained.log[0].train_loss
    assert set(trained.snapshots) == {"auc", "macro_f1"}
    best = max(r.val_auc for r in trained.log)
    assert trained.snapshots["auc"].val_score == best
    assert trained.log[trained.best_epoch - 1].val_auc == best
    rep = trained.evaluate(sp_.test)
    assert 0 <= rep.auc <= 1 and rep.n_pos + rep.n_neg == len(sp_.test)


@pytest.mark.parametrize("ablation", ["no-rmp", "no-spmp"])
def test_fit_ablations(ablation):
    sp_ = _small_split()
    trained = fit(sp_, HyperParams(epochs=3, ablation=ablation, rank_ratio=0.2))
    assert trained.params.x_u.shape[1] == 16
    assert (trained.store is None) == (ablation == "no-rmp")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_numeric_failure():
    with pytest.raises(NumericFailure):
        fit(_small_split(), HyperParams(epochs=3, learning_rate=float("inf")))


def test_fit_empty_split():
    sp_ = _small_split()
    sp_.train = sp_.test.__class__(sp_.train.u[:0], sp_.train.v[:0], sp_.train.label[:0])
    with pytest.raises(EmptySplit):
        fit(sp_, HyperParams(epochs=1))


def test_hyperparam_validation():
    assert HyperParams().embed_dim == 8
    assert HyperParams(ablation="no-rmp").embed_dim == 16
    with pytest.raises(ValueError):
        HyperParams(ablation="none")
    with pytest.raises(ValueError):
        HyperParams(final_dim=30)
    with pytest.raises(ValueError):
        HyperParams(select_metric="loss")


def test_checkpoint_round_trip(tmp_path):
    hp = HyperParams()
    p = init_params(7, 5, hp.embed_dim, hp.mlp_hidden, seed=4)
    path = tmp_path / "ckpt.bin"
    write_checkpoint(path, p, hp)
    q, digest = read_checkpoint(path)
    assert digest == hp.digest()
    assert all(np.array_equal(x, y) for (_, x), (_, y) in zip(p.items(), q.items()))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_checkpoint(path)
