import numpy as np
import pytest

from scafds.graphcore import InterbankGraph


def random_graph(n, n_edges, seed, labels=True, edge_dim=3):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < n_edges:
        u, v = (int(x) for x in rng.integers(0, n, 2))
        if u != v:
            pairs.add((u, v))
    pairs = sorted(pairs)
    src = np.array([p[0] for p in pairs])
    dst = np.array([p[1] for p in pairs])
    feats = rng.normal(size=(n, 6))
    ef = rng.uniform(0, 1, (len(pairs), edge_dim))
    y = (rng.random(n) < 0.3).astype(int) if labels else None
    if labels:
        y[0], y[1] = 1, 0
    return InterbankGraph.from_arrays([f"n{i}" for i in range(n)], feats, src, dst,
                                      rng.uniform(1, 5, len(pairs)), ef, y)


@pytest.fixture
def small_graph():
    return random_graph(10, 30, seed=3)


# acceptance outcomes keyed by criterion number: (passed, detail)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
