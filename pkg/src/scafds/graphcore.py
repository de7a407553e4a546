"""Interbank graph model, PageRank centrality and RAS exposure estimation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NODE_FEATURES = ("total_assets", "tier1", "npl", "lcr", "fraud_rate", "sar_rate")
WINDOW_COLUMNS = ("f90", "f180", "f365")


class GraphError(ValueError):
    pass


class InfeasibleError(GraphError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class InstitutionNode:
    id: str
    features: tuple
    label: int | None = None

    def __post_init__(self):
        if len(self.features) != len(NODE_FEATURES):
            raise GraphError(f"institution {self.id}: expected {len(NODE_FEATURES)} features")


@dataclass(frozen=True)
class DirectedEdge:
    src: str
    dst: str
    exposure: float
    edge_features: tuple

    def __post_init__(self):
        if self.src == self.dst:
            raise GraphError(f"self-exposure on {self.src}")
        if self.exposure < 0:
            raise GraphError("exposure must be nonnegative")
        if any(not 0.0 <= f <= 1.0 for f in self.edge_features[: len(WINDOW_COLUMNS)]):
            raise GraphError(f"window features outside [0, 1] on {self.src}->{self.dst}")


@dataclass(frozen=True)
class InterbankGraph:
    """Directed weighted snapshot G(t).

    Array views (``node_matrix``, ``edge_index`` ...) are built on demand and
    cached; the graph itself is never mutated.
    """

    nodes: tuple
    edges: tuple
    timestamp: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate institution ids")
        known = set(ids)
        seen = set()
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise GraphError(f"edge {e.src}->{e.dst} references an unknown institution")
            if (e.src, e.dst) in seen:
                raise GraphError(f"duplicate edge {e.src}->{e.dst}")
            seen.add((e.src, e.dst))

    @classmethod
    def from_arrays(cls, ids, features, src, dst, exposure, edge_features, labels=None, timestamp=0):
        ids = [str(i) for i in ids]
        nodes = tuple(
            InstitutionNode(ids[i], tuple(float(x) for x in features[i]),
                            None if labels is None else int(labels[i]))
            for i in range(len(ids))
        )
        edges = tuple(
            DirectedEdge(ids[s], ids[d], float(w), tuple(float(x) for x in ef))
            for s, d, w, ef in zip(src, dst, exposure, edge_features)
        )
        g = cls(nodes, edges, timestamp)
        # seed the cache with the arrays we already hold
        g._cache["node_matrix"] = np.asarray(features, dtype=np.float64).copy()
        g._cache["edge_index"] = (np.asarray(src, dtype=np.int64).copy(), np.asarray(dst, dtype=np.int64).copy())
        g._cache["exposure"] = np.asarray(exposure, dtype=np.float64).copy()
        if edges:
            g._cache["edge_matrix"] = np.asarray(edge_features, dtype=np.float64).reshape(len(edges), -1).copy()
        else:
            g._cache["edge_matrix"] = np.zeros((0, len(WINDOW_COLUMNS)))
        return g

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_edges(self):
        return len(self.edges)

    def index_of(self):
        if "index_of" not in self._cache:
            self._cache["index_of"] = {n.id: i for i, n in enumerate(self.nodes)}
        return self._cache["index_of"]

    def node_matrix(self):
        if "node_matrix" not in self._cache:
            self._cache["node_matrix"] = np.array([n.features for n in self.nodes], dtype=np.float64).reshape(self.n_nodes, len(NODE_FEATURES))
        return self._cache["node_matrix"]

    def labels(self):
        if any(n.label is None for n in self.nodes):
            return None
        return np.array([n.label for n in self.nodes], dtype=np.int64)

    def edge_index(self):
        if "edge_index" not in self._cache:
            idx = self.index_of()
            src = np.array([idx[e.src] for e in self.edges], dtype=np.int64)
            dst = np.array([idx[e.dst] for e in self.edges], dtype=np.int64)
            self._cache["edge_index"] = (src, dst)
        return self._cache["edge_index"]

    def exposure(self):
        if "exposure" not in self._cache:
            self._cache["exposure"] = np.array([e.exposure for e in self.edges], dtype=np.float64)
        return self._cache["exposure"]

    def edge_matrix(self):
        if "edge_matrix" not in self._cache:
            width = len(self.edges[0].edge_features) if self.edges else len(WINDOW_COLUMNS)
            self._cache["edge_matrix"] = np.array([e.edge_features for e in self.edges], dtype=np.float64).reshape(self.n_edges, width)
        return self._cache["edge_matrix"]

    def with_edge_features(self, edge_features):
        src, dst = self.edge_index()
        return InterbankGraph.from_arrays(
            [n.id for n in self.nodes], self.node_matrix(), src, dst, self.exposure(),
            edge_features, self.labels(), self.timestamp,
        )

    def with_node_features(self, features):
        src, dst = self.edge_index()
        return InterbankGraph.from_arrays(
            [n.id for n in self.nodes], features, src, dst, self.exposure(),
            self.edge_matrix(), self.labels(), self.timestamp,
        )

    def relabel(self, perm):
        """Return the isomorphic graph where node i becomes node perm[i]."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        src, dst = self.edge_index()
        ids = [self.nodes[i].id for i in inv]
        labels = self.labels()
        return InterbankGraph.from_arrays(
            ids, self.node_matrix()[inv], perm[src], perm[dst], self.exposure(),
            self.edge_matrix(), None if labels is None else labels[inv], self.timestamp,
        )


def cooccurrence_weights(g, combine="mean"):
    """Per-edge weight from the window features (default: mean of windows)."""
    ef = g.edge_matrix()[:, : len(WINDOW_COLUMNS)]
    if combine == "mean":
        return ef.mean(axis=1)
    if combine == "max":
        return ef.max(axis=1)
    if combine in WINDOW_COLUMNS:
        return ef[:, WINDOW_COLUMNS.index(combine)]
    raise ValueError(f"unknown combine rule {combine!r}")


def pagerank(g, damping=0.85, tol=1e-12, max_iter=1000, weights="cooccurrence"):
    """Power-iteration PageRank on the weighted digraph.

    ``weights`` is ``"cooccurrence"`` (mean of window features),
    ``"exposure"``, ``"uniform"``, or an explicit per-edge array. Mass held
    by dangling nodes is spread uniformly.
    """
    n = g.n_nodes
    if n == 0:
        raise GraphError("pagerank of an empty graph")
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    src, dst = g.edge_index()
    if isinstance(weights, str):
        if weights == "cooccurrence":
            w = cooccurrence_weights(g) if g.n_edges else np.zeros(0)
        elif weights == "exposure":
            w = g.exposure()
        elif weights == "uniform":
            w = np.ones(g.n_edges)
        else:
            raise ValueError(f"unknown weighting {weights!r}")
    else:
        w = np.asarray(weights, dtype=np.float64)
    return _pagerank_arrays(n, src, dst, w, damping, tol, max_iter)


def _pagerank_arrays(n, src, dst, w, damping, tol, max_iter):
    out_weight = np.bincount(src, weights=w, minlength=n)
    dangling = out_weight <= 0
    share = np.zeros_like(w)
    ok = out_weight[src] > 0
    share[ok] = w[ok] / out_weight[src][ok]
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        flow = np.bincount(dst, weights=r[src] * share, minlength=n)
        nxt = damping * (flow + r[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta < tol:
            break
    return r


def ras_estimate(row_marginals, col_marginals, forbid_diagonal=True, tol=1e-10, max_iter=10000,
                 prior=None, return_history=False):
    """Maximum-entropy bilateral matrix matching the given row/column sums.

    Starts from ``prior`` (all ones by default), zeroes the diagonal when
    ``forbid_diagonal``, then alternates row and column scaling.
    """
    r = np.asarray(row_marginals, dtype=np.float64)
    c = np.asarray(col_marginals, dtype=np.float64)
    if (r < 0).any() or (c < 0).any():
        raise InfeasibleError("marginals must be nonnegative")
    rs, cs = r.sum(), c.sum()
    if abs(rs - cs) > 1e-6 * max(1.0, rs, cs):
        raise InfeasibleError(f"row total {rs} differs from column total {cs}")
    if cs > 0:
        c = c * (rs / cs)
    x = np.ones((len(r), len(c))) if prior is None else np.array(prior, dtype=np.float64)
    if forbid_diagonal:
        k = min(x.shape)
        x[np.arange(k), np.arange(k)] = 0.0
    x[r == 0, :] = 0.0
    x[:, c == 0] = 0.0
    if ((x.sum(axis=1) == 0) & (r > 0)).any() or ((x.sum(axis=0) == 0) & (c > 0)).any():
        raise InfeasibleError("a row or column with positive target has no admissible cells")

    history = []
    residual = np.inf
    for _ in range(max_iter):
        rows = x.sum(axis=1)
        scale = np.divide(r, rows, out=np.zeros_like(r), where=rows > 0)
        x *= scale[:, None]
        cols = x.sum(axis=0)
        scale = np.divide(c, cols, out=np.zeros_like(c), where=cols > 0)
        x *= scale[None, :]
        row_dev = np.abs(x.sum(axis=1) - r)
        col_dev = np.abs(x.sum(axis=0) - c)
        # L1 deviation is what IPF keeps nonincreasing; max-abs decides convergence
        history.append(row_dev.sum() + col_dev.sum())
        residual = max(row_dev.max(initial=0.0), col_dev.max(initial=0.0))
        if residual < tol:
            break
    else:
        raise ConvergenceError("RAS did not converge", residual)
    return (x, history) if return_history else x


def shuffle_edge_features(g, seed, return_permutation=False):
    """Permute edge-feature vectors across edges, keeping topology and the multiset."""
    if g.n_edges < 2:
        raise GraphError("need at least two edges to shuffle")
    perm = np.random.default_rng(seed).permutation(g.n_edges)
    out = g.with_edge_features(g.edge_matrix()[perm])
    return (out, perm) if return_permutation else out


def unshuffle_edge_features(g, perm):
    inv = np.argsort(perm)
    return g.with_edge_features(g.edge_matrix()[inv])


def write_nodes_csv(g, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        has_label = g.labels() is not None
        w.writerow(["id", *NODE_FEATURES] + (["label"] if has_label else []))
        for n in g.nodes:
            w.writerow([n.id, *(repr(float(x)) for x in n.features)] + ([n.label] if has_label else []))


def write_edges_csv(g, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "exposure", *WINDOW_COLUMNS])
        for e in g.edges:
            w.writerow([e.src, e.dst, repr(float(e.exposure)), *(repr(float(x)) for x in e.edge_features[:3])])


def read_graph_csv(nodes_path, edges_path, timestamp=0):
    nodes_path, edges_path = Path(nodes_path), Path(edges_path)
    with open(nodes_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not set(("id",) + NODE_FEATURES) <= set(rows[0]):
        raise GraphError(f"{nodes_path}: header must contain id,{','.join(NODE_FEATURES)}")
    ids = [r["id"] for r in rows]
    feats = np.array([[float(r[k]) for k in NODE_FEATURES] for r in rows]).reshape(len(rows), len(NODE_FEATURES))
    labels = None
    if rows and "label" in rows[0] and all(r["label"] not in ("", None) for r in rows):
        labels = [int(float(r["label"])) for r in rows]
    with open(edges_path, newline="") as fh:
        erows = list(csv.DictReader(fh))
    if erows and not {"src", "dst", "exposure", *WINDOW_COLUMNS} <= set(erows[0]):
        raise GraphError(f"{edges_path}: header must be src,dst,exposure,f90,f180,f365")
    pos = {k: i for i, k in enumerate(ids)}
    src = [pos[r["src"]] for r in erows]
    dst = [pos[r["dst"]] for r in erows]
    expo = [float(r["exposure"]) for r in erows]
    ef = np.array([[float(r[k]) for k in WINDOW_COLUMNS] for r in erows]).reshape(len(erows), 3)
    return InterbankGraph.from_arrays(ids, feats, src, dst, expo, ef, labels, timestamp)


def standardize(features, mean=None, std=None):
    """Z-normalize columns; constant columns map to zero."""
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0) if mean is None else mean
    std = features.std(axis=0) if std is None else std
    safe = np.where(std > 0, std, 1.0)
    return (features - mean) / safe, mean, std


__all__ = [
    "ConvergenceError",
    "DirectedEdge",
    "GraphError",
    "InfeasibleError",
    "InstitutionNode",
    "InterbankGraph",
    "NODE_FEATURES",
    "WINDOW_COLUMNS",
    "cooccurrence_weights",
    "pagerank",
    "ras_estimate",
    "read_graph_csv",
    "shuffle_edge_features",
    "standardize",
    "unshuffle_edge_features",
    "write_edges_csv",
    "write_nodes_csv",
]
