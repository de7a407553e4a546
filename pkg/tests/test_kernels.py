import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scafds import _kernels_py as py
from scafds import kernels

compiled = pytest.importorskip("scafds._kernels")


def csr(n_seg, seed):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(0, 5, n_seg)
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


@given(st.integers(1, 8), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_backends_agree(n_seg, seed):
    rng = np.random.default_rng(seed)
    indptr = csr(n_seg, seed)
    e = int(indptr[-1])
    scores = rng.normal(size=(e, 3)) * 50
    rows = rng.normal(size=(e, 4))
    index = rng.integers(0, n_seg, e).astype(np.int64)
    assert np.allclose(py.segment_softmax(scores, indptr), compiled.segment_softmax(scores, indptr), atol=1e-14)
    assert np.allclose(py.segment_sum(rows, indptr), compiled.segment_sum(rows, indptr), atol=1e-12)
    assert np.allclose(py.scatter_add_rows(rows, index, n_seg), compiled.scatter_add_rows(rows, index, n_seg),
                       atol=1e-12)


def test_segment_softmax_matches_dense_loop():
    indptr = np.array([0, 2, 2, 5], dtype=np.int64)
    s = np.array([[1.0], [2.0], [0.0], [0.0], [3.0]])
    out = kernels.segment_softmax(s, indptr)
    for a, b in zip(indptr[:-1], indptr[1:]):
        if b > a:
            e = np.exp(s[a:b, 0] - s[a:b, 0].max())
            assert np.allclose(out[a:b, 0], e / e.sum())


@given(st.lists(st.integers(0, 200), max_size=15), st.lists(st.integers(0, 200), max_size=15),
       st.integers(1, 100))
@settings(max_examples=100, deadline=None)
def test_cooccurrence_count_brute_force(u, v, w):
    u, v = np.sort(np.array(u, dtype=np.int64)), np.sort(np.array(v, dtype=np.int64))
    expected = sum(1 for a in u if any(a <= b <= a + w for b in v))
    assert kernels.cooccurrence_count(u, v, w) == expected
    assert py.cooccurrence_count(u, v, w) == expected


@pytest.mark.parametrize("n", [1, 3, 7, 12])
def test_signed_rank_null_counts_enumeration(n):
    rng = np.random.default_rng(n)
    r = rng.integers(1, 2 * n, n).astype(np.int64)
    expected = np.zeros(int(r.sum()) + 1, dtype=np.int64)
    for code in range(1 << n):
        expected[sum(int(r[i]) for i in range(n) if code >> i & 1)] += 1
    assert np.array_equal(kernels.signed_rank_null_counts(r), expected)
    assert np.array_equal(py.signed_rank_null_counts(r, chunk_bits=4), expected)


def test_pure_python_switch(monkeypatch):
    monkeypatch.setenv("SCAFDS_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SCAFDS_PURE_PYTHON")
        importlib.reload(kernels)
    assert kernels.BACKEND == "compiled"
