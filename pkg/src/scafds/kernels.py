"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback is loaded. Set ``SCAFDS_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

if os.environ.get("SCAFDS_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"


def _rows(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def scatter_add_rows(values, index, n_out):
    """Sum rows of ``values`` into ``n_out`` buckets given by ``index``."""
    return _impl.scatter_add_rows(_rows(values), _idx(index), int(n_out))


def segment_sum(values, indptr):
    """Row sums over contiguous CSR segments."""
    return _impl.segment_sum(_rows(values), _idx(indptr))


def segment_softmax(scores, indptr):
    """Column-wise softmax inside each contiguous CSR segment."""
    return _impl.segment_softmax(_rows(scores), _idx(indptr))


def cooccurrence_count(u_times, v_times, window):
    return int(_impl.cooccurrence_count(_idx(u_times), _idx(v_times), int(window)))


def signed_rank_null_counts(doubled_ranks):
    """Counts of 2*W+ values over every sign assignment of the ranks."""
    return _impl.signed_rank_null_counts(_idx(doubled_ranks))
