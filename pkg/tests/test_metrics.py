import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scafds.metrics import (
    DomainError,
    auprc,
    auroc,
    f1_at_validation_threshold,
    stratified_split,
    wilcoxon_signed_rank,
)


def ap_sweep(s, y):
    """Average precision by sweeping every distinct threshold from high to low."""
    prev_recall, total = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        pred = s >= t
        tp = np.sum(pred & (y == 1))
        recall = tp / y.sum()
        total += (recall - prev_recall) * tp / pred.sum()
        prev_recall = recall
    return total


def auc_pairs(s, y):
    pos, neg = s[y == 1], s[y == 0]
    return np.mean([[1.0 if p > n else 0.5 if p == n else 0.0 for n in neg] for p in pos])


labelled = st.integers(2, 12).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 5), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_auc_metrics_match_brute_force(data):
    s, y = np.array(data[0], float), np.array(data[1])
    if y.min() == y.max():
        with pytest.raises(DomainError):
            auprc(s, y)
        return
    assert auprc(s, y) == pytest.approx(ap_sweep(s, y), abs=1e-12)
    assert auroc(s, y) == pytest.approx(auc_pairs(s, y), abs=1e-12)


def test_auc_examples():
    y = np.array([0, 0, 1, 0, 1, 1])
    s = np.array([0.1, 0.2, 0.8, 0.3, 0.9, 0.7])
    assert auprc(s, y) == 1.0 and auroc(s, y) == 1.0
    assert auroc(-s, y) == 0.0
    assert auprc(np.full(6, 0.4), y) == pytest.approx(0.5, abs=1e-15)
    # six-sample fixture with a tie across classes
    s2 = np.array([0.9, 0.8, 0.8, 0.5, 0.4, 0.1])
    y2 = np.array([1, 0, 1, 0, 1, 0])
    assert auprc(s2, y2) == pytest.approx(ap_sweep(s2, y2), abs=1e-15)
    assert auprc(s2, y2) == pytest.approx((1 / 3) * 1 + (1 / 3) * (2 / 3) + (1 / 3) * (3 / 5), abs=1e-15)
    with pytest.raises(DomainError):
        auroc([0.1, 0.2], [1, 2])


def test_auc_properties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.normal(size=30)
        y = rng.integers(0, 2, 30)
        y[:2] = [0, 1]
        assert auroc(s, y) + auroc(-s, y) == pytest.approx(1.0, abs=1e-12)
        for g in (np.exp, lambda v: v ** 3 + 2 * v, lambda v: np.arctan(v) * 5):
            assert auroc(g(s), y) == pytest.approx(auroc(s, y), abs=1e-15)
            assert auprc(g(s), y) == pytest.approx(auprc(s, y), abs=1e-15)


def f1_oracle(vs, vy, ts, ty):
    def f1(pred, y):
        tp = np.sum(pred & (y == 1))
        fp = np.sum(pred & (y == 0))
        fn = np.sum(~pred & (y == 1))
        return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)

    cuts = sorted(set(vs), reverse=True)
    best = max(range(len(cuts)), key=lambda k: (f1(vs >= cuts[k], vy), -k))
    thr = (cuts[best] + cuts[best + 1]) / 2 if best + 1 < len(cuts) else cuts[best]
    return thr, f1(ts >= thr, ty)


def test_f1_examples():
    thr, f1 = f1_at_validation_threshold([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0], [0.7, 0.2], [1, 0])
    assert thr == pytest.approx(0.55) and f1 == 1.0
    # every validation sample positive at the chosen cut
    vs, vy = [0.5, 0.5, 0.5, 0.5], [1, 0, 1, 1]
    ts, ty = np.full(10, 0.6), np.array([1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
    thr, f1 = f1_at_validation_threshold(vs, vy, ts, ty)
    p = 0.2
    assert f1 == pytest.approx(2 * p / (p + 1), abs=1e-15)


def test_f1_matches_sweep():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(4, 12))
        vs, ts = rng.integers(0, 6, n) / 5, rng.integers(0, 6, n) / 5
        vy, ty = rng.integers(0, 2, n), rng.integers(0, 2, n)
        vy[:2] = ty[:2] = [0, 1]
        got = f1_at_validation_threshold(vs, vy, ts, ty)
        want = f1_oracle(vs, vy, ts, ty)
        assert got[0] == pytest.approx(want[0], abs=1e-15) and got[1] == pytest.approx(want[1], abs=1e-15)


def signed_rank_oracle(d):
    """Two-sided exact p by listing all sign flips of the midranks."""
    d = d[d != 0]
    a = np.abs(d)
    ranks = np.array([np.sum(a < v) + (np.sum(a == v) + 1) / 2 for v in a])
    w = ranks[d > 0].sum()
    sums = np.array([ranks[np.array(signs, bool)].sum() for signs in itertools.product([0, 1], repeat=len(d))])
    return w, min(1.0, 2 * min(np.mean(sums <= w + 1e-9), np.mean(sums >= w - 1e-9)))


def test_wilcoxon_examples():
    assert wilcoxon_signed_rank([1, 2, 3], [1, 2, 3]).degenerate
    r = wilcoxon_signed_rank(np.arange(1, 11) + 0.5, np.arange(1, 11) * 0.1)
    assert r.method == "exact" and r.p_value == pytest.approx(2 / 2 ** 10, abs=1e-15)


def test_wilcoxon_matches_enumeration_and_is_symmetric():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(5, 11))
        a, b = np.round(rng.normal(size=n), 1), np.round(rng.normal(size=n), 1)
        r = wilcoxon_signed_rank(a, b)
        if r.degenerate:
            continue
        w, p = signed_rank_oracle(a - b)
        assert r.statistic == pytest.approx(w) and r.p_value == pytest.approx(p, abs=1e-12)
        assert 0 < r.p_value <= 1
        assert wilcoxon_signed_rank(b, a).p_value == pytest.approx(r.p_value, abs=1e-12)


def test_wilcoxon_normal_band_at_n8():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = rng.normal(size=8), rng.normal(size=8)
        exact = wilcoxon_signed_rank(a, b).p_value
        approx = wilcoxon_signed_rank(a, b, exact_max_n=0).p_value
        # continuity-corrected normal approximation at n = 8 stays within 0.03
        assert abs(exact - approx) < 0.03


def test_split_hygiene():
    y = np.array([0] * 85 + [1] * 15)
    tr, va, te = stratified_split(y, 4)
    assert len(set(tr) | set(va) | set(te)) == 100
    assert not (set(tr) & set(va) or set(tr) & set(te) or set(va) & set(te))
    assert (y[tr].sum(), y[va].sum(), y[te].sum()) == (10, 2, 3)
    again = stratified_split(y, 4)
    assert all(np.array_equal(p, q) for p, q in zip((tr, va, te), again))
    assert not np.array_equal(tr, stratified_split(y, 5)[0])
