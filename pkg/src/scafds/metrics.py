"""Ranking metrics, validation-tuned F1 and the Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


class DomainError(ValueError):
    pass


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise DomainError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be binary")
    if y.sum() == 0 or y.sum() == len(y):
        raise DomainError("both classes must be present")
    return s, y


def auprc(scores, labels):
    """Average precision: sum over distinct thresholds of recall gain times precision."""
    s, y = _check(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    precision = tp / seen
    recall = tp / y.sum()
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


def midranks(x):
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores, labels):
    """Probability a random positive outscores a random negative; ties count half."""
    s, y = _check(scores, labels)
    r = midranks(s)
    P = int(y.sum())
    N = len(y) - P
    return float((r[y == 1].sum() - P * (P + 1) / 2.0) / (P * N))


def f1_score(pred, labels):
    pred = np.asarray(pred, dtype=bool)
    y = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & y))
    denom = 2 * tp + int(np.sum(pred & ~y)) + int(np.sum(~pred & y))
    return 0.0 if denom == 0 else 2.0 * tp / denom


def f1_at_validation_threshold(val_scores, val_labels, test_scores, test_labels):
    """Pick the F1-maximizing cut on validation, then score the test split.

    A sample is predicted positive when its score is at least the threshold.
    Each distinct validation score defines one candidate cut; the returned
    threshold is the midpoint between that score and the next lower one, so it
    sits in the middle of the gap that yields the same validation predictions.
    Among equally good cuts the highest is kept.
    """
    vs, vy = _check(val_scores, val_labels)
    ts, ty = _check(test_scores, test_labels)
    uniq = np.unique(vs)[::-1]
    best, best_k = -1.0, 0
    for k, t in enumerate(uniq):
        f = f1_score(vs >= t, vy)
        if f > best:
            best, best_k = f, k
    cut = uniq[best_k]
    thr = 0.5 * (cut + uniq[best_k + 1]) if best_k + 1 < len(uniq) else cut
    return float(thr), f1_score(ts >= thr, ty)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str
    degenerate: bool = False
    small_sample: bool = False


EXACT_MAX_N = 20


def wilcoxon_signed_rank(a, b, exact_max_n=EXACT_MAX_N):
    """Two-sided signed-rank test on paired samples.

    Zero differences are dropped. ``statistic`` is the positive rank sum W+.
    Up to ``exact_max_n`` pairs the null distribution is enumerated over all
    sign assignments (midranks for ties); beyond that a tie-corrected normal
    approximation with continuity correction is used.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", degenerate=True)
    r = midranks(np.abs(d))
    w_plus = float(r[d > 0].sum())
    if n <= exact_max_n:
        doubled = np.rint(2 * r).astype(np.int64)
        counts = kernels.signed_rank_null_counts(doubled)
        total = float(counts.sum())
        k = int(round(2 * w_plus))
        lower = counts[:k + 1].sum() / total
        upper = counts[k:].sum() / total
        p = float(min(1.0, 2.0 * min(lower, upper)))
        return WilcoxonResult(w_plus, p, n, "exact", small_sample=n < 5)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (abs(w_plus - mean) - 0.5) / math.sqrt(var)
    p = min(1.0, math.erfc(max(z, 0.0) / math.sqrt(2.0)))
    return WilcoxonResult(w_plus, p, n, "normal")


def wilcoxon_normal_p(a, b):
    return wilcoxon_signed_rank(a, b, exact_max_n=0).p_value


def stratified_split(labels, seed, fractions=(0.70, 0.15, 0.15)):
    """Disjoint train/validation/test index arrays, stratified by label."""
    y = np.asarray(labels).astype(np.int64)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng([int(seed), 0x5917])
    parts = [[], [], []]
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n = len(idx)
        n_tr = int(round(fractions[0] * n))
        n_va = int(round(fractions[1] * n))
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)
