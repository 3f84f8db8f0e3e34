import os
from pathlib import Path

import numpy as np
import pytest

from signbip.graph import build_graph, normalize

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: (r[0], r[1])):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        terminalreporter.write_line(f"[{status}] {number}. {name}: {detail}")


def random_edges(rng, n_u, n_v, m=None, p_pos=0.6):
    """Distinct random signed edges as (u, v, +1/-1) tuples."""
    pairs = [(u, v) for u in range(n_u) for v in range(n_v)]
    if m is None:
        m = int(rng.integers(1, len(pairs) + 1))
    m = min(m, len(pairs))
    chosen = rng.choice(len(pairs), size=m, replace=False)
    return [(pairs[i][0], pairs[i][1], 1 if rng.random() < p_pos else -1) for i in chosen]


def random_graph(rng, n_u, n_v, m=None, p_pos=0.6):
    edges = random_edges(rng, n_u, n_v, m, p_pos)
    return edges, normalize(build_graph(edges, n_u, n_v))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dataset_path(name):
    """Real dataset files are looked up under $SIGNBIP_DATA_DIR as <name>.tsv."""
    root = os.environ.get("SIGNBIP_DATA_DIR")
    if not root:
        return None
    path = Path(root) / f"{name}.tsv"
    return path if path.exists() else None
