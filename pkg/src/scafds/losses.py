"""Loss functions shared by the graph, sequence and fusion stages."""

from __future__ import annotations

import numpy as np

from .numkernel import Tensor, as_tensor, ops


class ClampCounter:
    """Counts probabilities pushed back into (0, 1) by ``focal_loss``."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


clamp_warnings = ClampCounter()

PROB_FLOOR = 1e-12


def focal_loss(p, y, gamma=2.0, alpha=0.75):
    """Mean of ``-alpha_t * (1 - p_t)**gamma * log(p_t)`` over samples.

    ``p`` holds predicted probabilities of the positive class. Values outside
    ``(0, 1)`` are clamped to ``[1e-12, 1 - 1e-12]`` and tallied in
    ``clamp_warnings``.
    """
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    bad = (p.values <= 0.0) | (p.values >= 1.0)
    if bad.any():
        clamp_warnings.count += int(bad.sum())
    p = ops.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    pos = y > 0.5
    p_true = ops.where(pos, p, 1.0 - p)
    weight = np.where(pos, alpha, 1.0 - alpha)
    mod = ops.power(1.0 - p_true, gamma) if gamma != 0 else 1.0
    return ops.mean(-(weight * mod * ops.log(p_true)))


def focal_loss_logits(z, y, gamma=2.0, alpha=0.75):
    """``focal_loss(sigmoid(z), y)`` computed stably from logits."""
    z = as_tensor(z)
    y = np.asarray(y, dtype=np.float64).reshape(z.shape)
    sign = np.where(y > 0.5, 1.0, -1.0)
    log_pt = ops.log_sigmoid(z * sign)
    weight = np.where(y > 0.5, alpha, 1.0 - alpha)
    if gamma == 0:
        return ops.mean(-(weight * log_pt))
    one_minus = 1.0 - ops.exp(log_pt)
    return ops.mean(-(weight * ops.power(ops.clip(one_minus, 0.0, 1.0), gamma) * log_pt))


def bilinear_scores(emb, src, dst, M):
    """``c_u^T M c_v`` for every pair ``(u, v) = (src[i], dst[i])``."""
    left = ops.matmul(ops.gather_rows(emb, src), M)
    return ops.dot_rows(left, ops.gather_rows(emb, dst))


def alignment_loss(scores, f, tau=0.05):
    """Mean of ``(1 - score) * f`` over pairs with ``f > tau``; 0 if none."""
    scores = as_tensor(scores)
    f = np.asarray(f, dtype=np.float64)
    keep = f > tau
    if not keep.any():
        return Tensor(0.0)
    idx = np.flatnonzero(keep)
    return ops.mean((1.0 - ops.getitem(scores, idx)) * f[idx])


def contrastive_loss(scores, margin=0.5):
    """Mean hinge ``max(0, score - margin)`` over zero-co-occurrence pairs."""
    scores = as_tensor(scores)
    if scores.size == 0:
        return Tensor(0.0)
    return ops.mean(ops.relu(scores - margin))


def fco_loss(aligned_scores, f, zero_scores, tau=0.05, margin=0.5):
    return alignment_loss(aligned_scores, f, tau) + contrastive_loss(zero_scores, margin)
