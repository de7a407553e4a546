"""Bilinear fusion of transaction and contagion evidence into risk scores."""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass

import numpy as np

from .losses import alignment_loss, bilinear_scores, contrastive_loss, fco_loss, focal_loss_logits
from .numkernel import ShapeError, Tensor, as_tensor, no_tape, ops
from .numkernel.init import glorot
from .numkernel.ops import _sigmoid
from .training import fit

BILINEAR = "bilinear"
ADDITIVE = "additive"


@dataclass
class FusionParams:
    M: Tensor
    w: Tensor
    proj: Tensor
    gamma: float = 1.0
    margin: float = 0.5
    tau_fco: float = 0.05

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.M.shape != (self.proj.shape[0],) * 2:
            raise ShapeError("M must be square with the embedding width")

    @classmethod
    def init(cls, G, seed=0, gamma=1.0, margin=0.5, tau_fco=0.05):
        rng = np.random.default_rng([int(seed), zlib.crc32(b"fusion")])
        M = Tensor(np.eye(G) / G + rng.normal(0.0, 0.01, (G, G)), requires_grad=True)
        w = Tensor(np.ones(3), requires_grad=True)
        proj = glorot(rng, G, 1, shape=(G,))
        return cls(M, w, proj, gamma, margin, tau_fco)

    def tensors(self):
        return {"fusion.M": self.M, "fusion.w": self.w, "fusion.proj": self.proj}


def interaction(c_v, c_c, M, mode=BILINEAR):
    """Row-wise ``c_v^T M c_c`` (bilinear) or ``c_v^T c_c`` (additive)."""
    c_v, c_c = as_tensor(c_v), as_tensor(c_c)
    if c_v.shape != c_c.shape:
        raise ShapeError(f"embedding shapes differ: {c_v.shape} vs {c_c.shape}")
    if mode == BILINEAR:
        return ops.dot_rows(ops.matmul(c_v, M), c_c)
    if mode == ADDITIVE:
        return ops.dot_rows(c_v, c_c)
    raise ValueError(f"unknown fusion mode {mode!r}")


def forensic_logit(s_tx, c_v, c_c, params: FusionParams, mode=BILINEAR):
    """Pre-sigmoid forensic score for a batch of institutions (rows)."""
    c_v, c_c = as_tensor(c_v), as_tensor(c_c)
    if c_v.ndim != 2 or c_v.shape[1] != params.proj.shape[0]:
        raise ShapeError(f"embeddings of width {params.proj.shape[0]} expected, got {c_v.shape}")
    s_tx = as_tensor(np.broadcast_to(np.asarray(s_tx, dtype=np.float64), (c_v.shape[0],)).copy()
                     if not isinstance(s_tx, Tensor) else s_tx)
    w = params.w
    own = ops.matmul(c_v, params.proj)
    return w[0] * s_tx + w[1] * own + w[2] * interaction(c_v, c_c, params.M, mode)


def forensic_score(s_tx, c_v, c_c, params: FusionParams, mode=BILINEAR):
    """sigmoid(w1 s_tx + w2 proj(c_v) + w3 c_v^T M c_c); vectors give a float."""
    single = np.ndim(c_v.values if isinstance(c_v, Tensor) else c_v) == 1
    cv = np.atleast_2d(c_v.values if isinstance(c_v, Tensor) else np.asarray(c_v, dtype=np.float64))
    cc = np.atleast_2d(c_c.values if isinstance(c_c, Tensor) else np.asarray(c_c, dtype=np.float64))
    with no_tape():
        out = ops.sigmoid(forensic_logit(s_tx, cv, cc, params, mode)).values
    return float(out[0]) if single else out


def neighbor_mean(emb, src, dst, n):
    """Mean in-neighbour embedding per node; zero rows for nodes without in-edges."""
    emb = as_tensor(emb)
    deg = np.bincount(np.asarray(dst, dtype=np.int64), minlength=n).astype(np.float64)
    total = ops.scatter_add_rows(ops.gather_rows(emb, src), dst, n)
    return total * (1.0 / np.maximum(deg, 1.0))[:, None]


def systemic_risk_score(forensic_scores, beta=None, gamma=1.0, pagerank=0.0):
    """``sigmoid(sum_t beta_t s_t + gamma * PageRank)`` plus an evidence flag.

    ``beta`` defaults to uniform weights; it is renormalized to sum to 1.
    """
    s = np.asarray(forensic_scores, dtype=np.float64).reshape(-1)
    meta = {"no_evidence": s.size == 0}
    if s.size == 0:
        total = 0.0
    else:
        b = np.full(s.size, 1.0 / s.size) if beta is None else np.asarray(beta, dtype=np.float64).reshape(-1)
        if b.shape != s.shape:
            raise ShapeError("beta and forensic scores differ in length")
        if np.any(b < 0) or b.sum() <= 0:
            raise ValueError("beta weights must be nonnegative with a positive sum")
        total = float(np.dot(b / b.sum(), s))
    return float(_sigmoid(np.array([total + gamma * float(pagerank)]))[0]), meta


def attention_beta(alpha_mass):
    """Softmax-normalized weights from per-transaction attention mass."""
    a = np.asarray(alpha_mass, dtype=np.float64)
    e = np.exp(a - a.max())
    return e / e.sum()


@dataclass(frozen=True)
class Stage5Config:
    mode: str = BILINEAR
    fco_weight: float = 0.01
    tau_fco: float = 0.05
    margin: float = 0.5
    gamma: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.75
    lr: float = 1e-2
    weight_decay: float = 1e-4
    min_lr: float = 0.0
    epochs: int = 200


@dataclass
class Stage5Result:
    params: FusionParams
    s_forensic: np.ndarray
    loss_curve: list
    counterparty: np.ndarray


def stage5_loss(params, emb, c_c, s_tx, labels, train_idx, pairs, config):
    z = forensic_logit(s_tx, emb, c_c, params, config.mode)
    loss = focal_loss_logits(ops.getitem(z, train_idx), labels[train_idx], config.focal_gamma, config.focal_alpha)
    if pairs is not None and config.fco_weight > 0:
        aligned = bilinear_scores(emb, pairs.src, pairs.dst, params.M)
        zero = bilinear_scores(emb, pairs.zero_src, pairs.zero_dst, params.M) if len(pairs.zero_src) else Tensor(np.zeros(0))
        loss = loss + config.fco_weight * fco_loss(aligned, pairs.f, zero, config.tau_fco, config.margin)
    return loss


def train_stage5(embeddings, s_tx, edge_index, labels, train_idx, pairs=None, config=None, seed=0,
                 params=None, epochs=None):
    """Jointly fit M, w and the projection on frozen contagion embeddings."""
    config = config or Stage5Config()
    emb = Tensor(np.asarray(embeddings, dtype=np.float64))
    n, G = emb.shape
    labels = np.asarray(labels, dtype=np.float64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    src, dst = edge_index
    with no_tape():
        c_c = neighbor_mean(emb, src, dst, n)
    c_c = Tensor(c_c.values)
    s_tx = np.zeros(n) if s_tx is None else np.asarray(s_tx, dtype=np.float64)
    params = params or FusionParams.init(G, seed, config.gamma, config.margin, config.tau_fco)
    total = config.epochs if epochs is None else epochs

    def loss_fn(epoch, rng):
        return stage5_loss(params, emb, c_c, s_tx, labels, train_idx, pairs, config)

    curve, _ = fit(params.tensors(), loss_fn, total, config.lr, config.weight_decay, config.min_lr, seed,
                   name="stage5")
    with no_tape():
        s = ops.sigmoid(forensic_logit(s_tx, emb, c_c, params, config.mode)).values
    return Stage5Result(params, s, curve, c_c.values)


def write_scores_csv(path, ids, S_v, s_forensic_mean, pagerank):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["institution", "S_v", "s_forensic_mean", "pagerank"])
        for row in zip(ids, S_v, s_forensic_mean, pagerank):
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


__all__ = [
    "ADDITIVE",
    "BILINEAR",
    "FusionParams",
    "Stage5Config",
    "Stage5Result",
    "alignment_loss",
    "attention_beta",
    "contrastive_loss",
    "fco_loss",
    "forensic_logit",
    "forensic_score",
    "interaction",
    "neighbor_mean",
    "systemic_risk_score",
    "train_stage5",
    "write_scores_csv",
]
