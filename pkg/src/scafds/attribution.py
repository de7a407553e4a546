"""Three-layer forensic attribution: feature Shapley values, per-edge
contagion contributions and temporal attention."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numkernel import no_tape
from .numkernel.ops import _sigmoid
from .seqmodel import score_transaction, sequence_logits

MAX_EXACT_FEATURES = 12


class ShapleyCapError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def _evaluate(model, batch, vectorized):
    if vectorized:
        out = np.asarray(model(batch), dtype=np.float64).reshape(-1)
        if len(out) != len(batch):
            raise ValueError("vectorized model returned the wrong number of outputs")
        return out
    return np.array([float(model(row)) for row in batch])


def _coalition_inputs(x, background, masks, n):
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    return np.where(bits, x[None, :], background[None, :])


@dataclass
class ShapleyResult:
    values: np.ndarray
    base_value: float
    output: float
    stderr: np.ndarray | None = None
    n_permutations: int = 0

    @property
    def efficiency_residual(self):
        return abs(self.base_value + float(self.values.sum()) - self.output)


def shapley_exact(model, x, background, max_features=MAX_EXACT_FEATURES, vectorized=False):
    """Shapley values by enumerating all 2^n coalitions.

    Absent features take their background value. With ``vectorized`` the
    model receives the whole (2^n, n) coalition matrix in one call.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.broadcast_to(np.asarray(background, dtype=np.float64), x.shape).copy()
    n = len(x)
    if n > max_features:
        raise ShapleyCapError(f"{n} features exceed the exact cap of {max_features}; use shapley_sampled")
    masks = np.arange(1 << n, dtype=np.int64)
    v = _evaluate(model, _coalition_inputs(x, background, masks, n), vectorized)
    size = np.array([bin(m).count("1") for m in masks])
    fact = [math.factorial(k) for k in range(n + 1)]
    weight = np.array([fact[s] * fact[n - s - 1] / fact[n] if s < n else 0.0 for s in size])
    values = np.zeros(n)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        values[i] = np.sum(weight[without] * (v[without | (1 << i)] - v[without]))
    return ShapleyResult(values, float(v[0]), float(v[-1]))


def shapley_sampled(model, x, background, n_permutations=200, seed=0, vectorized=False):
    """Permutation-sampling estimate with per-feature standard errors."""
    if n_permutations < 100:
        raise ValueError("n_permutations must be at least 100")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    background = np.broadcast_to(np.asarray(background, dtype=np.float64), x.shape).copy()
    n = len(x)
    rng = np.random.default_rng([int(seed), 0x5A])
    perms = np.stack([rng.permutation(n) for _ in range(n_permutations)])
    rows = np.empty((n_permutations, n + 1, n))
    current = np.repeat(background[None, :], n_permutations, axis=0)
    rows[:, 0] = current
    for k in range(n):
        cols = perms[:, k]
        current[np.arange(n_permutations), cols] = x[cols]
        rows[:, k + 1] = current
    v = _evaluate(model, rows.reshape(-1, n), vectorized).reshape(n_permutations, n + 1)
    marg = np.zeros((n_permutations, n))
    steps = np.diff(v, axis=1)
    marg[np.arange(n_permutations)[:, None], perms] = steps
    values = marg.mean(axis=0)
    stderr = marg.std(axis=0, ddof=1) / math.sqrt(n_permutations)
    base = float(_evaluate(model, background[None, :], vectorized)[0])
    out = float(_evaluate(model, x[None, :], vectorized)[0])
    return ShapleyResult(values, base, out, stderr, n_permutations)


@dataclass(frozen=True)
class EdgeContribution:
    src: str
    dst: str
    contribution: float
    f: float


def network_attribution(c_v, neighbors, M, w3, weights=None, receiver="v"):
    """Split the bilinear amplification ``w3 * sum_u weight_u c_v^T M c_u`` by edge.

    ``neighbors`` is a list of ``(u, c_u, f_uv)``. ``weights`` defaults to 1
    per edge; passing ``1/k`` matches a mean over counterparties.
    """
    c_v = np.asarray(c_v, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    left = c_v @ M
    weights = np.ones(len(neighbors)) if weights is None else np.asarray(weights, dtype=np.float64)
    out = []
    for (u, c_u, f), wgt in zip(neighbors, weights):
        out.append(EdgeContribution(str(u), str(receiver), float(w3 * wgt * (left @ np.asarray(c_u))), float(f)))
    return out


@dataclass
class AttributionRecord:
    case_id: str
    layer1: list
    layer2: list
    layer3: list
    base_value: float
    output: float
    mode: str = "exact"
    target: str = "s_tx"
    layer1_stderr: list | None = None
    metadata: dict = field(default_factory=dict)

    def efficiency_residual(self):
        return abs(self.base_value + sum(v for _, v in self.layer1) - self.output)

    def validate(self, tol=1e-8):
        if self.layer3:
            total = sum(a for _, a in self.layer3)
            if abs(total - 1.0) > 1e-8:
                raise ValueError(f"temporal weights sum to {total}, not 1")
        if self.mode == "exact" and self.layer1 and self.efficiency_residual() > tol:
            raise ValueError(f"layer1 efficiency residual {self.efficiency_residual():.3e} exceeds {tol}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["layer1"] = [{"feature": n, "shapley": v} for n, v in self.layer1]
        d["layer2"] = [asdict(e) if isinstance(e, EdgeContribution) else e for e in self.layer2]
        d["layer3"] = [{"step": int(t), "alpha": a} for t, a in self.layer3]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layer1"] = [(e["feature"], e["shapley"]) for e in d["layer1"]]
        d["layer2"] = [EdgeContribution(**e) for e in d["layer2"]]
        d["layer3"] = [(e["step"], e["alpha"]) for e in d["layer3"]]
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class CaseInputs:
    """Everything about one institution needed to explain its score."""

    case_id: str
    steps: np.ndarray
    neighbors: list
    node_index: int = -1
    neighbor_names: list | None = None
    metadata: dict = field(default_factory=dict)


@dataclass
class TrainedModels:
    stage4: object = None
    fusion: object = None
    embeddings: np.ndarray | None = None
    background: np.ndarray | None = None
    feature_names: tuple = ()
    fusion_mode: str = "bilinear"


def _masked_scorer(models, steps, target, rest_logit):
    steps = np.asarray(steps, dtype=np.float64)
    bg = np.asarray(models.background, dtype=np.float64)

    def model(coalitions):
        coalitions = np.atleast_2d(coalitions).astype(bool)
        # a coalition keeps whole feature channels and fills the rest with the background
        batch = np.where(coalitions[:, None, :], steps[None, :, :], bg[None, None, :])
        with no_tape():
            logit, _ = sequence_logits(batch, models.stage4)
        s_tx = _sigmoid(logit.values.reshape(-1))
        if target == "s_tx":
            return s_tx
        w1 = float(models.fusion.w.values[0])
        return _sigmoid(w1 * s_tx + rest_logit)

    return model


def build_record(case: CaseInputs, models: TrainedModels, target="s_tx", mode="exact",
                 n_permutations=200, seed=0):
    """Assemble the three attribution layers for one case.

    ``case.neighbors`` holds ``(row, f)`` pairs indexing ``models.embeddings``.
    Layer 2 splits the counterparty term over those edges with weight 1/k,
    matching the neighbour-mean counterparty used during fusion.
    """
    if models.stage4 is None or models.background is None:
        raise StateError("the transaction model is not trained")
    if target not in ("s_tx", "s_forensic"):
        raise ValueError("target must be 's_tx' or 's_forensic'")
    need_fusion = target == "s_forensic" or case.neighbors
    if need_fusion and (models.fusion is None or models.embeddings is None):
        raise StateError("the fusion stage is not trained")
    n_feat = case.steps.shape[1]
    names = tuple(models.feature_names) or tuple(f"x{i}" for i in range(n_feat))

    s_tx, alpha = score_transaction(case.steps, models.stage4)
    rest = 0.0
    layer2 = []
    if need_fusion:
        fp = models.fusion
        c_v = models.embeddings[case.node_index]
        w = fp.w.values
        own = float(c_v @ fp.proj.values)
        k = len(case.neighbors)
        c_c = np.mean([models.embeddings[u] for u, _ in case.neighbors], axis=0) if k else np.zeros_like(c_v)
        M = fp.M.values if models.fusion_mode == "bilinear" else np.eye(len(c_v))
        rest = w[1] * own + w[2] * float(c_v @ M @ c_c)
        if k:
            labels = case.neighbor_names or [str(u) for u, _ in case.neighbors]
            nb = [(lab, models.embeddings[u], f) for lab, (u, f) in zip(labels, case.neighbors)]
            layer2 = network_attribution(c_v, nb, M, w[2], np.full(k, 1.0 / k), case.case_id)

    scorer = _masked_scorer(models, case.steps, target, rest)
    ones = np.ones(n_feat)
    zeros = np.zeros(n_feat)
    if mode == "exact":
        res = shapley_exact(scorer, ones, zeros, vectorized=True)
        stderr = None
    else:
        res = shapley_sampled(scorer, ones, zeros, n_permutations, seed, vectorized=True)
        stderr = [float(s) for s in res.stderr]
    record = AttributionRecord(
        case.case_id,
        [(names[i], float(res.values[i])) for i in range(n_feat)],
        layer2,
        [(t, float(a)) for t, a in enumerate(alpha)],
        res.base_value,
        res.output,
        mode,
        target,
        stderr,
        dict(case.metadata),
    )
    return record.validate() if mode == "exact" else record


__all__ = [
    "AttributionRecord",
    "CaseInputs",
    "EdgeContribution",
    "MAX_EXACT_FEATURES",
    "ShapleyCapError",
    "ShapleyResult",
    "StateError",
    "TrainedModels",
    "build_record",
    "network_attribution",
    "shapley_exact",
    "shapley_sampled",
]
