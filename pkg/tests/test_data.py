from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signbip.data import (
    load_edge_list,
    split,
    stats,
    synth_graph,
    synth_propensity_graph,
    training_graph,
    write_edge_list,
)
from signbip.errors import DuplicatePair, EmptySplit, InvalidSign, ParseError, TooManyEdges

from conftest import dataset_path


def _write(tmp_path, text, name="toy.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_well_formed(tmp_path):
    ds = load_edge_list(_write(tmp_path, "# header\nalice\titem9\t1\n\nbob\titem9\t-1\nalice\titem3\t+1\n"))
    assert ds.n_edges == 3 and ds.name == "toy"
    assert ds.u_index == {"alice": 0, "bob": 1}
    assert ds.v_index == {"item9": 0, "item3": 1}
    assert ds.edges() == [(0, 0, 1), (1, 0, -1), (0, 1, 1)]


@pytest.mark.parametrize("text, error, line", [
    ("a\tb\t1\nc\td\t0\n", InvalidSign, 2),
    ("a\tb\t1\na b 1\n", ParseError, 2),
    ("a\tb\t1\tx\n", ParseError, 1),
    ("a\tb\t1\n# c\na\tb\t-1\n", DuplicatePair, 3),
])
def test_load_errors_carry_line(tmp_path, text, error, line):
    with pytest.raises(error) as info:
        load_edge_list(_write(tmp_path, text))
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_round_trip(tmp_path):
    ds = load_edge_list(_write(tmp_path, "u1\tv1\t1\nu2\tv1\t-1\nu2\tv7\t1\nu3\tv2\t-1\n"))
    out = tmp_path / "out.tsv"
    write_edge_list(ds, out)
    again = load_edge_list(out, name="toy")
    assert again.u_index == ds.u_index and again.v_index == ds.v_index
    assert Counter(again.edges()) == Counter(ds.edges())


def test_stats():
    ds = synth_graph(10, 10, 40, 0.5, seed=1)
    s = stats(ds)
    assert s["n_edges"] == 40 and s["n_pos"] + s["n_neg"] == 40
    assert s["pos_fraction"] == pytest.approx(s["n_pos"] / 40)


def test_split_sizes_example():
    ds = synth_graph(10, 10, 20, 0.5, seed=0)
    sp_ = split(ds, seed=0)
    assert (len(sp_.train), len(sp_.val), len(sp_.test)) == (17, 1, 2)


def _edge_set(part):
    return set(zip(part.u.tolist(), part.v.tolist(), part.label.tolist()))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 300), seed=st.integers(0, 10**6))
def test_split_partition_laws(m, seed):
    ds = synth_graph(30, 30, m, 0.6, seed=seed)
    sp_ = split(ds, seed=seed)
    parts = [_edge_set(p) for p in (sp_.train, sp_.val, sp_.test)]
    assert len(sp_.train) == int(0.85 * m + 1e-9) and len(sp_.val) == int(0.05 * m + 1e-9)
    assert sum(len(p) for p in parts) == m
    assert not (parts[0] & parts[1]) and not (parts[0] & parts[2]) and not (parts[1] & parts[2])
    everything = {(u, v, int(s > 0)) for u, v, s in ds.edges()}
    assert parts[0] | parts[1] | parts[2] == everything
    again = split(ds, seed=seed)
    assert np.array_equal(again.train.u, sp_.train.u) and np.array_equal(again.test.v, sp_.test.v)


def test_split_bad_fractions():
    with pytest.raises(ValueError):
        split(synth_graph(5, 5, 10, 0.5), fractions=(0.8, 0.1, 0.2))


def test_training_graph_no_leakage():
    ds = synth_propensity_graph(40, 40, 600, seed=2)
    sp_ = split(ds, seed=5)
    g = training_graph(sp_)
    adjacency = (g.r_pos + g.r_neg).tocsr()
    assert adjacency.nnz == len(sp_.train)
    for part in (sp_.val, sp_.test):
        assert not adjacency[part.u, part.v].any()
    for u, v, y in zip(sp_.train.u, sp_.train.v, sp_.train.label):
        assert (g.r_pos if y else g.r_neg)[u, v] == 1


def test_training_graph_all_edges_when_val_test_empty():
    ds = synth_graph(6, 6, 12, 0.5, seed=0)
    sp_ = split(ds, fractions=(1.0, 0.0, 0.0))
    assert training_graph(sp_).n_edges == 12


def test_training_graph_empty():
    ds = synth_graph(6, 6, 1, 0.5, seed=0)
    with pytest.raises(EmptySplit):
        training_graph(split(ds, fractions=(0.0, 0.0, 1.0)))


def test_synth_graph():
    ds = synth_graph(100, 100, 500, 0.8, seed=4)
    assert len(set(zip(ds.u.tolist(), ds.v.tolist()))) == 500
    assert not np.any(synth_graph(20, 20, 100, 1.0, seed=1).sign < 0)
    dense = synth_graph(4, 4, 16, 0.5, seed=1)
    assert len(set(zip(dense.u.tolist(), dense.v.tolist()))) == 16
    with pytest.raises(TooManyEdges):
        synth_graph(3, 3, 10, 0.5)


def test_synth_graph_deterministic():
    a = synth_propensity_graph(30, 20, 200, seed=9)
    b = synth_propensity_graph(30, 20, 200, seed=9)
    assert a.edges() == b.edges()


# Values from the published dataset table; these only run when the files exist.

def test_review_counts():
    path = dataset_path("review")
    if path is None:
        pytest.skip("review.tsv not found under SIGNBIP_DATA_DIR")
    ds = load_edge_list(path)
    s = stats(ds)
    assert (s["n_u"], s["n_v"], s["n_edges"], s["n_pos"], s["n_neg"]) == (182, 304, 1170, 464, 706)
    assert round(100 * s["pos_fraction"], 1) == 40.3
    sp_ = split(ds, seed=0)
    assert training_graph(sp_).n_edges == len(sp_.train)


def test_bonanza_counts():
    path = dataset_path("bonanza")
    if path is None:
        pytest.skip("bonanza.tsv not found under SIGNBIP_DATA_DIR")
    s = stats(load_edge_list(path))
    assert (s["n_u"], s["n_v"], s["n_edges"], s["n_pos"], s["n_neg"]) == (7919, 1973, 36543, 35805, 738)
