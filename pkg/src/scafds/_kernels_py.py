"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def scatter_add_rows(values, index, n_out):
    m, k = values.shape
    flat = (index[:, None] * k + np.arange(k)).ravel()
    out = np.bincount(flat, weights=values.ravel(), minlength=n_out * k)
    return out.reshape(n_out, k)


def segment_sum(values, indptr):
    n = len(indptr) - 1
    seg = np.repeat(np.arange(n), np.diff(indptr))
    return scatter_add_rows(values, seg, n)


def segment_softmax(scores, indptr):
    counts = np.diff(indptr)
    nonempty = counts > 0
    out = np.empty_like(scores)
    if not nonempty.any():
        return out
    starts = indptr[:-1][nonempty]
    seg = np.repeat(np.arange(len(counts)), counts)
    mx = np.zeros((len(counts), scores.shape[1]))
    mx[nonempty] = np.maximum.reduceat(scores, starts, axis=0)
    ex = np.exp(scores - mx[seg])
    tot = scatter_add_rows(ex, seg, len(counts))
    out[:] = ex / tot[seg]
    return out


def cooccurrence_count(u_times, v_times, window):
    if len(u_times) == 0 or len(v_times) == 0:
        return 0
    # first v event at or after each u event
    pos = np.searchsorted(v_times, u_times, side="left")
    ok = pos < len(v_times)
    hits = np.zeros(len(u_times), dtype=bool)
    hits[ok] = v_times[pos[ok]] <= u_times[ok] + window
    return int(hits.sum())


def signed_rank_null_counts(doubled_ranks, chunk_bits=16):
    r = np.asarray(doubled_ranks, dtype=np.int64)
    n = len(r)
    counts = np.zeros(int(r.sum()) + 1, dtype=np.int64)
    low = min(n, chunk_bits)
    codes = np.arange(1 << low, dtype=np.int64)
    bits = (codes[:, None] >> np.arange(low)) & 1
    low_sums = bits @ r[:low]
    for hi_code in range(1 << (n - low)):
        hi_bits = (hi_code >> np.arange(n - low)) & 1
        offset = int(hi_bits @ r[low:]) if n > low else 0
        counts += np.bincount(low_sums + offset, minlength=len(counts))
    return counts
