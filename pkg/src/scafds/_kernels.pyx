# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for segment reductions, co-occurrence counting and
exact signed-rank enumeration.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature and bit-compatible results up to floating point summation order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def scatter_add_rows(double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n_out):
    cdef Py_ssize_t m = values.shape[0], k = values.shape[1], i, j, r
    out = np.zeros((n_out, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        r = index[i]
        for j in range(k):
            o[r, j] += values[i, j]
    return out


def segment_sum(double[:, ::1] values, const cnp.int64_t[::1] indptr):
    cdef Py_ssize_t n = indptr.shape[0] - 1, k = values.shape[1], s, i, j
    out = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    for s in range(n):
        for i in range(indptr[s], indptr[s + 1]):
            for j in range(k):
                o[s, j] += values[i, j]
    return out


def segment_softmax(double[:, ::1] scores, const cnp.int64_t[::1] indptr):
    cdef Py_ssize_t n = indptr.shape[0] - 1, k = scores.shape[1], s, i, j
    cdef Py_ssize_t lo, hi
    cdef double mx, tot
    out = np.empty((scores.shape[0], k), dtype=np.float64)
    cdef double[:, ::1] o = out
    for s in range(n):
        lo = indptr[s]
        hi = indptr[s + 1]
        if lo == hi:
            continue
        for j in range(k):
            mx = scores[lo, j]
            for i in range(lo + 1, hi):
                if scores[i, j] > mx:
                    mx = scores[i, j]
            tot = 0.0
            for i in range(lo, hi):
                o[i, j] = exp(scores[i, j] - mx)
                tot += o[i, j]
            for i in range(lo, hi):
                o[i, j] /= tot
    return out


def cooccurrence_count(const cnp.int64_t[::1] u_times, const cnp.int64_t[::1] v_times,
                       cnp.int64_t window):
    """Number of ``u_times`` entries t' with some v time in [t', t' + window].

    Both inputs must be sorted ascending.
    """
    cdef Py_ssize_t nu = u_times.shape[0], nv = v_times.shape[0], i, p = 0
    cdef Py_ssize_t hits = 0
    for i in range(nu):
        while p < nv and v_times[p] < u_times[i]:
            p += 1
        if p < nv and v_times[p] <= u_times[i] + window:
            hits += 1
    return hits


def signed_rank_null_counts(const cnp.int64_t[::1] doubled_ranks):
    """Histogram of 2*W+ over all 2**n sign assignments, walked in Gray-code order."""
    cdef Py_ssize_t n = doubled_ranks.shape[0], total = 0, i, bit
    cdef unsigned long long code, nxt, flips, limit
    for i in range(n):
        total += doubled_ranks[i]
    counts = np.zeros(total + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] c = counts
    cdef Py_ssize_t acc = 0
    limit = (<unsigned long long>1) << n
    code = 0
    c[0] += 1
    for i in range(1, limit):
        nxt = i ^ (i >> 1)
        flips = nxt ^ code
        bit = 0
        while not (flips & 1):
            flips >>= 1
            bit += 1
        if nxt & ((<unsigned long long>1) << bit):
            acc += doubled_ranks[bit]
        else:
            acc -= doubled_ranks[bit]
        code = nxt
        c[acc] += 1
    return counts
