"""Graph attention over interbank snapshots with a recurrent temporal stage.

Attention scores combine the receiving node, the sending node and the edge's
co-occurrence window vector. With ``edge_values`` on, the edge vector is also
projected into each message, which lets a node aggregate what its edges say
about its own risk. Without it, the receiving node's share of the edge vector
would cancel inside the softmax over its in-neighbours.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .graphcore import InterbankGraph, cooccurrence_weights
from .losses import alignment_loss, bilinear_scores, contrastive_loss, focal_loss, focal_loss_logits
from .numkernel import ShapeError, Tensor, as_tensor, no_tape, ops
from .numkernel.init import glorot, zeros
from .training import TrainingError, dropout, fit

EDGE_AWARE = "edge_aware"
NODE_ONLY = "node_only"
MEAN = "mean"
MODES = (EDGE_AWARE, NODE_ONLY, MEAN)


class DomainError(ValueError):
    pass


def param_rng(seed, name):
    # a stream per tensor name keeps shared tensors identical across ablations
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class GraphTensors:
    """Edges sorted by destination with CSR offsets, ready for segment kernels."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    indptr: np.ndarray
    edge_features: np.ndarray
    order: np.ndarray
    isolated: np.ndarray

    @classmethod
    def from_arrays(cls, n, src, dst, edge_features=None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if edge_features is None:
            edge_features = np.zeros((len(src), 0))
        edge_features = np.asarray(edge_features, dtype=np.float64).reshape(len(src), -1)
        order = np.argsort(dst, kind="stable")
        indeg = np.bincount(dst, minlength=n)
        indptr = np.concatenate([[0], np.cumsum(indeg)]).astype(np.int64)
        return cls(n, src[order], dst[order], indptr, edge_features[order], order, indeg == 0)

    @classmethod
    def from_graph(cls, g: InterbankGraph):
        src, dst = g.edge_index()
        return cls.from_arrays(g.n_nodes, src, dst, g.edge_matrix())

    @property
    def n_edges(self):
        return len(self.src)

    def unsort(self, per_edge):
        """Map a per-edge array from sorted order back to the graph's order."""
        out = np.empty_like(per_edge)
        out[self.order] = per_edge
        return out


@dataclass
class GatLayerParams:
    W: Tensor
    b: Tensor | None
    a_dst: Tensor | None
    a_src: Tensor | None
    a_edge: Tensor | None
    W_edge: Tensor | None
    heads: int
    leaky_slope: float = 0.2
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.heads < 1:
            raise ShapeError("need at least one attention head")
        if self.W.shape[1] % self.heads:
            raise ShapeError("output width must split evenly across heads")

    @property
    def head_dim(self):
        return self.W.shape[1] // self.heads

    @classmethod
    def init(cls, rng, din, heads, head_dim, edge_dim=3, mode=EDGE_AWARE, edge_values=False,
             leaky_slope=0.2, dropout_rate=0.0):
        """``rng`` is a generator or a callable mapping a tensor name to one."""
        pick = rng if callable(rng) else (lambda name: rng)
        W = glorot(pick("W"), din, heads * head_dim)
        b = zeros((heads * head_dim,))
        a_dst = a_src = a_edge = W_edge = None
        if mode != MEAN:
            a_dst = glorot(pick("a_dst"), head_dim, 1, shape=(heads, head_dim))
            a_src = glorot(pick("a_src"), head_dim, 1, shape=(heads, head_dim))
        if mode == EDGE_AWARE:
            a_edge = glorot(pick("a_edge"), edge_dim, heads)
            if edge_values:
                W_edge = glorot(pick("W_edge"), edge_dim, heads * head_dim)
        return cls(W, b, a_dst, a_src, a_edge, W_edge, heads, leaky_slope, dropout_rate)

    def tensors(self):
        names = ("W", "b", "a_dst", "a_src", "a_edge", "W_edge")
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}


def _attention(Whr, gt, p, mode):
    if mode == MEAN:
        deg = np.diff(gt.indptr)[gt.dst].astype(np.float64)
        return Tensor(np.repeat((1.0 / deg)[:, None], p.heads, axis=1))
    s_dst = ops.sum(Whr * p.a_dst, axis=-1)
    s_src = ops.sum(Whr * p.a_src, axis=-1)
    score = ops.gather_rows(s_dst, gt.dst) + ops.gather_rows(s_src, gt.src)
    if mode == EDGE_AWARE:
        if gt.edge_features.shape[1] != p.a_edge.shape[0]:
            raise ShapeError(f"edge features have width {gt.edge_features.shape[1]}, "
                             f"attention expects {p.a_edge.shape[0]}")
        score = score + ops.matmul(Tensor(gt.edge_features), p.a_edge)
    score = ops.leaky_relu(score, p.leaky_slope)
    return ops.segment_softmax(score, gt.indptr)


def gat_layer(h, gt: GraphTensors, p: GatLayerParams, mode=EDGE_AWARE, rng=None, return_attention=False):
    """One propagation step: ELU of the attention-weighted sum of messages.

    Messages are ``W h_u + b`` per head, plus the projected edge vector when
    the layer carries ``W_edge``. Nodes without in-edges keep ``W h_v + b``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown attention mode {mode!r}")
    h = as_tensor(h)
    if h.ndim != 2 or h.shape[0] != gt.n:
        raise ShapeError(f"expected features for {gt.n} nodes, got shape {h.shape}")
    if h.shape[1] != p.W.shape[0]:
        raise ShapeError(f"feature width {h.shape[1]} does not match layer input {p.W.shape[0]}")
    H, d = p.heads, p.head_dim
    h = dropout(h, p.dropout_rate, rng)
    Wh = ops.matmul(h, p.W)
    alpha = _attention(ops.reshape(Wh, (gt.n, H, d)), gt, p, mode)
    if p.b is not None:
        Wh = Wh + p.b
    msg = ops.gather_rows(Wh, gt.src)
    if p.W_edge is not None and mode == EDGE_AWARE:
        msg = msg + ops.matmul(Tensor(gt.edge_features), p.W_edge)
    msg = ops.reshape(msg, (gt.n_edges, H, d)) * ops.reshape(alpha, (gt.n_edges, H, 1))
    agg = ops.scatter_add_rows(ops.reshape(msg, (gt.n_edges, H * d)), gt.dst, gt.n)
    if gt.isolated.any():
        agg = ops.where(gt.isolated[:, None], Wh, agg)
    out = ops.elu(agg)
    return (out, alpha) if return_attention else out


def attention_coefficients(h, g, params: GatLayerParams, mode=EDGE_AWARE):
    """Per-edge, per-head attention in the graph's edge order, shape (E, H)."""
    gt = g if isinstance(g, GraphTensors) else GraphTensors.from_graph(g)
    h = as_tensor(h)
    if mode == EDGE_AWARE and gt.edge_features.shape[1] == 0:
        raise ShapeError("edge_aware attention needs edge features")
    with no_tape():
        Wh = ops.matmul(h, params.W)
        alpha = _attention(ops.reshape(Wh, (gt.n, params.heads, params.head_dim)), gt, params, mode)
    return gt.unsort(alpha.values)


def gat_forward(g, x, layers, mode=EDGE_AWARE, steps=None, residual=False, rng=None):
    """Stack ``steps`` propagation steps; one layer is shared when only one is given."""
    gt = g if isinstance(g, GraphTensors) else GraphTensors.from_graph(g)
    layers = list(layers) if isinstance(layers, (list, tuple)) else [layers]
    steps = len(layers) if steps is None else steps
    if len(layers) not in (1, steps):
        raise ShapeError("give one shared layer or one layer per step")
    h = as_tensor(x)
    for k in range(steps):
        p = layers[k] if len(layers) > 1 else layers[0]
        out = gat_layer(h, gt, p, mode, rng)
        if residual:
            if out.shape != h.shape:
                raise ShapeError("residual steps need equal input and output widths")
            out = out + h
        h = out
    return h


@dataclass
class TemporalParams:
    """Stacked GRU cells; ``layers[l]`` maps gate names to tensors."""

    layers: list
    hidden: int

    def __post_init__(self):
        if self.hidden <= 0:
            raise ValueError("GRU hidden size must be positive")

    @classmethod
    def init(cls, rng, din, hidden, n_layers=1):
        pick = rng if callable(rng) else (lambda name: rng)
        layers = []
        for l in range(n_layers):
            fan_in = din if l == 0 else hidden
            cell = {}
            for gate in ("r", "z", "n"):
                cell[f"W_x{gate}"] = glorot(pick(f"gru{l}.W_x{gate}"), fan_in, hidden)
                cell[f"W_h{gate}"] = glorot(pick(f"gru{l}.W_h{gate}"), hidden, hidden)
            for b in ("b_r", "b_z", "b_xn", "b_hn"):
                cell[b] = zeros((hidden,))
            layers.append(cell)
        return cls(layers, hidden)

    def tensors(self):
        return {f"gru{l}.{k}": t for l, cell in enumerate(self.layers) for k, t in cell.items()}


def gru_cell(x, h, cell):
    r = ops.sigmoid(ops.matmul(x, cell["W_xr"]) + ops.matmul(h, cell["W_hr"]) + cell["b_r"])
    z = ops.sigmoid(ops.matmul(x, cell["W_xz"]) + ops.matmul(h, cell["W_hz"]) + cell["b_z"])
    cand = ops.tanh(ops.matmul(x, cell["W_xn"]) + cell["b_xn"] + r * (ops.matmul(h, cell["W_hn"]) + cell["b_hn"]))
    return (1.0 - z) * cand + z * h


def temporal_aggregate(snapshot_embeddings, params: TemporalParams):
    """Final top-layer GRU state per node after reading the snapshots in order."""
    seq = [as_tensor(s) for s in snapshot_embeddings]
    if not seq:
        raise DomainError("need at least one snapshot")
    n = seq[0].shape[0]
    if any(s.shape[0] != n for s in seq):
        raise DomainError("snapshots cover different node sets")
    for cell in params.layers:
        h = Tensor(np.zeros((n, params.hidden)))
        out = []
        for x in seq:
            h = gru_cell(x, h, cell)
            out.append(h)
        seq = out
    return seq[-1]


@dataclass(frozen=True)
class Stage3Config:
    heads: int = 4
    head_dim: int = 8
    hidden: int = 16
    gru_layers: int = 2
    steps: int = 2
    shared_steps: bool = True
    mode: str = EDGE_AWARE
    edge_values: bool = True
    temporal: bool = True
    residual: bool = True
    dropout: float = 0.3
    temporal_dropout: float = 0.5
    leaky_slope: float = 0.2
    focal_gamma: float = 2.0
    focal_alpha: float = 0.75
    lr: float = 1e-2
    weight_decay: float = 1e-4
    min_lr: float = 0.0
    epochs: int = 150
    fco_weight: float = 0.0
    tau_fco: float = 0.05
    margin: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown attention mode {self.mode!r}")
        if self.heads < 1 or self.head_dim < 1 or self.hidden < 1 or self.steps < 1:
            raise ValueError("sizes must be positive")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.temporal_dropout < 1.0):
            raise ValueError("dropout rates must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class PairSupervision:
    """Edges with co-occurrence weight ``f`` plus pairs known to have ``f = 0``."""

    src: np.ndarray
    dst: np.ndarray
    f: np.ndarray
    zero_src: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    zero_dst: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def validate(self, n):
        for a in (self.src, self.dst, self.zero_src, self.zero_dst):
            if len(a) and (a.min() < 0 or a.max() >= n):
                raise DomainError("pair supervision references an unknown node")


def pair_supervision_from_graph(g: InterbankGraph, n_zero=None, seed=0):
    """Edge pairs weighted by their mean window feature, plus sampled non-edges."""
    src, dst = g.edge_index()
    f = cooccurrence_weights(g)
    n = g.n_nodes
    n_zero = min(len(src), 2000) if n_zero is None else n_zero
    rng = np.random.default_rng([int(seed), 0xF0])
    existing = set(zip(src.tolist(), dst.tolist()))
    zs, zd = [], []
    guard = 0
    while len(zs) < n_zero and guard < 50 * max(n_zero, 1):
        u, v = rng.integers(0, n, 2)
        guard += 1
        if u != v and (int(u), int(v)) not in existing:
            zs.append(int(u))
            zd.append(int(v))
    return PairSupervision(src.copy(), dst.copy(), f, np.array(zs, np.int64), np.array(zd, np.int64))


class Stage3Model:
    """Input projection, shared-weight attention steps, GRU and a linear readout."""

    def __init__(self, config: Stage3Config, n_features, edge_dim=3, seed=0):
        self.config = config
        self.n_features = n_features
        self.edge_dim = edge_dim
        self.seed = seed
        c = config
        width = c.heads * c.head_dim
        self.params = {"in.W": glorot(param_rng(seed, "in.W"), n_features, width), "in.b": zeros((width,))}
        self.layers = []
        for k in range(1 if c.shared_steps else c.steps):
            layer = GatLayerParams.init(lambda name, k=k: param_rng(seed, f"gat{k}.{name}"), width,
                                        c.heads, c.head_dim, edge_dim, c.mode, c.edge_values,
                                        c.leaky_slope, c.dropout)
            self.layers.append(layer)
            self.params.update({f"gat{k}.{name}": t for name, t in layer.tensors().items()})
        self.temporal = None
        if c.temporal:
            self.temporal = TemporalParams.init(lambda name: param_rng(seed, name), width, c.hidden, c.gru_layers)
            self.params.update(self.temporal.tensors())
        emb = self.embedding_dim
        self.params["out.w"] = glorot(param_rng(seed, "out.w"), emb, 1)
        self.params["out.b"] = zeros((1,))
        jitter = param_rng(seed, "pair.M").normal(0, 0.01, (emb, emb))
        self.params["pair.M"] = Tensor(np.eye(emb) / emb + jitter, requires_grad=True)

    @property
    def embedding_dim(self):
        c = self.config
        return c.hidden if c.temporal else c.heads * c.head_dim

    def load_params(self, params):
        for k, t in params.items():
            if k not in self.params or self.params[k].shape != t.shape:
                raise ShapeError(f"checkpoint tensor {k} does not fit this model")
            self.params[k].values[...] = t.values

    def spatial(self, gt, x, rng=None):
        c = self.config
        h = ops.matmul(as_tensor(x), self.params["in.W"]) + self.params["in.b"]
        for k in range(c.steps):
            layer = self.layers[0 if c.shared_steps else k]
            out = gat_layer(h, gt, layer, c.mode, rng)
            h = out + h if c.residual else out
        return h

    def encode(self, graphs, features, rng=None):
        """Contagion embeddings from a time-ordered list of snapshots."""
        spatial = [self.spatial(gt, x, rng) for gt, x in zip(graphs, features)]
        if self.temporal is None:
            return spatial[-1]
        spatial = [dropout(s, self.config.temporal_dropout, rng) for s in spatial]
        return temporal_aggregate(spatial, self.temporal)

    def logits(self, emb):
        return ops.reshape(ops.matmul(emb, self.params["out.w"]), (emb.shape[0],)) + self.params["out.b"]


@dataclass
class Stage3Result:
    model: Stage3Model
    embeddings: np.ndarray
    scores: np.ndarray
    loss_curve: list


def snapshot_inputs(snapshots):
    graphs = [GraphTensors.from_graph(g) for g in snapshots]
    feats = [g.node_matrix() for g in snapshots]
    return graphs, feats


def stage3_loss(model, graphs, feats, labels, train_idx, pairs, rng=None):
    c = model.config
    emb = model.encode(graphs, feats, rng)
    z = ops.getitem(model.logits(emb), train_idx)
    loss = focal_loss_logits(z, labels[train_idx], c.focal_gamma, c.focal_alpha)
    if pairs is not None and c.fco_weight > 0:
        M = model.params["pair.M"]
        aligned = bilinear_scores(emb, pairs.src, pairs.dst, M)
        l_fco = alignment_loss(aligned, pairs.f, c.tau_fco)
        if len(pairs.zero_src):
            l_fco = l_fco + contrastive_loss(bilinear_scores(emb, pairs.zero_src, pairs.zero_dst, M), c.margin)
        loss = loss + c.fco_weight * l_fco
    return loss


def stage3_no_decay(params):
    return [k for k in params if k.endswith((".b", "b_r", "b_z", "b_xn", "b_hn"))]


def train_stage3(snapshots, labels, train_idx, pairs=None, config=None, seed=0, model=None,
                 optimizer=None, start_epoch=0, epochs=None, stop_epoch=None):
    """Full-batch focal-loss training with optional co-occurrence pair terms."""
    config = config or Stage3Config()
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0) | (labels == 1)):
        raise DomainError("labels must be binary")
    train_idx = np.asarray(train_idx, dtype=np.int64)
    graphs, feats = snapshot_inputs(snapshots)
    n = graphs[0].n
    if any(gt.n != n for gt in graphs):
        raise DomainError("snapshots cover different node sets")
    if pairs is not None:
        pairs.validate(n)
    if model is None:
        model = Stage3Model(config, feats[0].shape[1], graphs[0].edge_features.shape[1], seed)
    total = config.epochs if epochs is None else epochs

    def loss_fn(epoch, rng):
        stochastic = config.dropout > 0 or config.temporal_dropout > 0
        return stage3_loss(model, graphs, feats, labels, train_idx, pairs, rng if stochastic else None)

    curve, opt = fit(model.params, loss_fn, total, config.lr, config.weight_decay, config.min_lr,
                     seed, no_decay=stage3_no_decay(model.params), optimizer=optimizer,
                     start_epoch=start_epoch, name="stage3", stop_epoch=stop_epoch)
    model.optimizer = opt
    with no_tape():
        emb = model.encode(graphs, feats)
        scores = ops.sigmoid(model.logits(emb)).values
    return Stage3Result(model, emb.values, scores, curve)


def feedback_update(alpha, edge, eta, delta):
    """Raise one in-edge's attention by ``eta * delta`` and renormalize.

    ``alpha`` maps ``(u, v)`` pairs that share the receiving node ``v`` to
    attention weights (scalars or per-head arrays).
    """
    if eta <= 0 and delta != 0:
        raise ValueError("eta must be positive")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if edge not in alpha:
        raise DomainError(f"{edge} is not an in-edge of the receiving node")
    receivers = {v for _, v in alpha}
    if len(receivers) != 1:
        raise DomainError("attention state mixes several receiving nodes")
    raised = {k: np.asarray(a, dtype=np.float64) for k, a in alpha.items()}
    raised[edge] = raised[edge] + eta * delta
    total = sum(raised.values())
    return {k: a / total for k, a in raised.items()}


def default_delta(strength, elapsed_days):
    """Confidence decays with the time a disposition took to arrive."""
    return float(strength) / (1.0 + float(elapsed_days) / 30.0)


__all__ = [
    "DomainError",
    "EDGE_AWARE",
    "GatLayerParams",
    "GraphTensors",
    "MEAN",
    "NODE_ONLY",
    "PairSupervision",
    "Stage3Config",
    "Stage3Model",
    "Stage3Result",
    "TemporalParams",
    "TrainingError",
    "attention_coefficients",
    "default_delta",
    "feedback_update",
    "focal_loss",
    "gat_forward",
    "gat_layer",
    "gru_cell",
    "pair_supervision_from_graph",
    "snapshot_inputs",
    "stage3_loss",
    "temporal_aggregate",
    "stage3_no_decay",
    "train_stage3",
]
