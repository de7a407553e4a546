"""Bidirectional LSTM with additive attention over transaction sequences."""

from __future__ import annotations

import csv
import math
import zlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .losses import focal_loss_logits
from .numkernel import ShapeError, Tensor, as_tensor, no_tape, ops
from .numkernel.init import glorot, zeros
from .training import fit

SEQ_LEN = 32


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionRecord:
    amount: float
    counterparty: str
    tx_type: int
    time_of_day: float
    geo: int
    device: int
    rolling_stats: tuple = ()

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError("transaction amount must be nonnegative")
        if not 0.0 <= self.time_of_day < 24.0:
            raise ValueError("time_of_day must lie in [0, 24)")


@dataclass
class TxSequence:
    account: str
    steps: np.ndarray
    label: int
    start_time: float = 0.0
    end_time: float = 0.0
    amounts: np.ndarray | None = None


def _rng(seed, name):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class Stage4Config:
    hidden: int = 32
    attention_dim: int = 16
    focal_gamma: float = 2.0
    focal_alpha: float = 0.75
    lr: float = 1e-2
    weight_decay: float = 1e-4
    min_lr: float = 0.0
    epochs: int = 40
    batch_size: int = 512


class Stage4Model:
    def __init__(self, n_features, hidden=32, attention_dim=16, seed=0):
        self.n_features = n_features
        self.hidden = hidden
        H = hidden
        p = {}
        for d in ("fwd", "bwd"):
            p[f"{d}.W_x"] = glorot(_rng(seed, f"{d}.W_x"), n_features, 4 * H)
            p[f"{d}.W_h"] = glorot(_rng(seed, f"{d}.W_h"), H, 4 * H)
            p[f"{d}.b"] = zeros((4 * H,))
        p["att.W"] = glorot(_rng(seed, "att.W"), 2 * H, attention_dim)
        p["att.b"] = zeros((attention_dim,))
        p["att.v"] = glorot(_rng(seed, "att.v"), attention_dim, 1, shape=(attention_dim,))
        p["out.w"] = glorot(_rng(seed, "out.w"), 2 * H, 1, shape=(2 * H,))
        p["out.b"] = zeros((1,))
        self.params = p

    def load_params(self, params):
        for k, t in params.items():
            if k not in self.params or self.params[k].shape != t.shape:
                raise ShapeError(f"checkpoint tensor {k} does not fit this model")
            self.params[k].values[...] = t.values


def lstm_cell(x, h, c, W_x, W_h, b, hidden):
    """Gate order in the fused weights: input, forget, cell candidate, output."""
    gates = ops.matmul(x, W_x) + ops.matmul(h, W_h) + b
    H = hidden
    i = ops.sigmoid(gates[:, 0:H])
    f = ops.sigmoid(gates[:, H:2 * H])
    g = ops.tanh(gates[:, 2 * H:3 * H])
    o = ops.sigmoid(gates[:, 3 * H:4 * H])
    c = f * c + i * g
    return o * ops.tanh(c), c


def _as_batch(x):
    x = as_tensor(x)
    if x.ndim == 2:
        x = ops.reshape(x, (1,) + x.shape)
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, time, features), got {x.shape}")
    return x


def bilstm_forward(x, model: Stage4Model):
    """Hidden states ``[h_fwd_t || h_bwd_t]`` for every step, shape (B, T, 2H)."""
    x = _as_batch(x)
    B, T, F = x.shape
    if F != model.n_features:
        raise ShapeError(f"sequence has {F} features, model expects {model.n_features}")
    H = model.hidden
    p = model.params
    steps = [x[:, t, :] for t in range(T)]
    outs = {}
    for d, order in (("fwd", range(T)), ("bwd", range(T - 1, -1, -1))):
        h = Tensor(np.zeros((B, H)))
        c = Tensor(np.zeros((B, H)))
        seq = [None] * T
        for t in order:
            h, c = lstm_cell(steps[t], h, c, p[f"{d}.W_x"], p[f"{d}.W_h"], p[f"{d}.b"], H)
            seq[t] = h
        outs[d] = seq
    return ops.stack([ops.concat([outs["fwd"][t], outs["bwd"][t]], axis=-1) for t in range(T)], axis=1)


def temporal_attention(h, model: Stage4Model):
    """Additive attention over time; returns ``(alpha (B, T), z (B, 2H))``."""
    h = as_tensor(h)
    B, T, D = h.shape
    p = model.params
    proj = ops.tanh(ops.matmul(ops.reshape(h, (B * T, D)), p["att.W"]) + p["att.b"])
    scores = ops.reshape(ops.matmul(proj, p["att.v"]), (B, T))
    alpha = ops.softmax(scores, axis=1)
    z = ops.sum(h * ops.reshape(alpha, (B, T, 1)), axis=1)
    return alpha, z


def sequence_logits(x, model):
    alpha, z = temporal_attention(bilstm_forward(x, model), model)
    return ops.matmul(z, model.params["out.w"]) + model.params["out.b"], alpha


def score_transaction(x, model):
    """Fraud probability per sequence and the attention weights behind it."""
    single = np.asarray(x.steps if isinstance(x, TxSequence) else as_tensor(x).values).ndim == 2
    steps = x.steps if isinstance(x, TxSequence) else x
    with no_tape():
        logit, alpha = sequence_logits(steps, model)
        s = ops.sigmoid(logit).values
    if single:
        return float(s[0]), alpha.values[0]
    return s, alpha.values


def _stack_dataset(dataset):
    if not dataset:
        raise ValueError("empty dataset")
    X = np.stack([s.steps for s in dataset])
    y = np.array([s.label for s in dataset], dtype=np.float64)
    return X, y


def train_stage4(dataset, config=None, seed=0, model=None, optimizer=None, start_epoch=0):
    """Minibatch focal-loss training; each epoch visits sequences in a seeded order."""
    config = config or Stage4Config()
    X, y = _stack_dataset(dataset)
    if model is None:
        model = Stage4Model(X.shape[2], config.hidden, config.attention_dim, seed)
    n = len(y)
    per_epoch = max(1, math.ceil(n / config.batch_size))
    total = config.epochs * per_epoch

    def loss_fn(step, rng):
        epoch, b = divmod(step, per_epoch)
        order = np.random.default_rng([int(seed), int(epoch), 4]).permutation(n)
        idx = order[b * config.batch_size:(b + 1) * config.batch_size]
        logit, _ = sequence_logits(X[idx], model)
        return focal_loss_logits(logit, y[idx], config.focal_gamma, config.focal_alpha)

    curve, opt = fit(model.params, loss_fn, total, config.lr, config.weight_decay, config.min_lr,
                     seed, no_decay=[k for k in model.params if k.endswith(".b")], optimizer=optimizer,
                     start_epoch=start_epoch * per_epoch, name="stage4")
    model.optimizer = opt
    model.loss_curve = [float(np.mean(curve[i:i + per_epoch])) for i in range(0, len(curve), per_epoch)]
    return model


def planted_sequences(n, seq_len=SEQ_LEN, n_features=10, positive_rate=0.2, burst=3, shift=2.5, seed=0):
    """Gaussian sequences; positives carry a short burst of shifted steps.

    Returns the sequences and, for positives, the burst start (else -1).
    """
    rng = np.random.default_rng([int(seed), 0x7A])
    out, starts = [], []
    for i in range(n):
        steps = rng.normal(0.0, 1.0, (seq_len, n_features))
        label = int(rng.random() < positive_rate)
        start = -1
        if label:
            start = int(rng.integers(0, seq_len - burst + 1))
            steps[start:start + burst, :3] += shift
        amounts = np.round(np.exp(rng.normal(4.0, 1.0, seq_len)), 2)
        out.append(TxSequence(f"acct{i:05d}", steps, label, float(i), float(i + seq_len - 1), amounts))
        starts.append(start)
    return out, np.array(starts)


@dataclass(frozen=True)
class TxSchema:
    """Column mapping for transaction CSVs."""

    account: str = "account"
    time: str = "time"
    amount: str = "amount"
    label: str = "label"
    categorical: tuple = ("counterparty", "tx_type", "geo", "device")
    numeric: tuple = ("time_of_day",)
    seq_len: int = SEQ_LEN


@dataclass
class CategoryEncoder:
    """Frequency-ranked integer codes; code 0 is reserved for unseen values."""

    codes: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, values):
        counts = Counter(values)
        ranked = sorted(counts, key=lambda v: (-counts[v], v))
        return cls({v: i + 1 for i, v in enumerate(ranked)})

    def encode(self, value):
        return self.codes.get(value, 0)


@dataclass
class TxDataset:
    sequences: list
    feature_names: tuple
    encoders: dict
    skipped_rows: int = 0
    skipped_accounts: int = 0

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]


def _float_or_nan(text):
    text = (text or "").strip()
    if text == "" or text.lower() in ("nan", "na", "null"):
        return math.nan
    return float(text)


def impute_medians(matrix):
    """Fill NaNs with column medians; complete columns are returned untouched."""
    out = np.array(matrix, dtype=np.float64, copy=True)
    for j in range(out.shape[1]):
        col = out[:, j]
        miss = np.isnan(col)
        if miss.any():
            med = np.median(col[~miss]) if (~miss).any() else 0.0
            col[miss] = med
    return out


def ingest_transactions_csv(path, schema=None, encoders=None):
    """Group rows by account, sort by time, encode, impute and window.

    Accounts shorter than one window contribute nothing; longer accounts are
    cut into non-overlapping windows and the partial tail is dropped. A
    window is labelled positive if any of its rows is.
    """
    schema = schema or TxSchema()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        rows = list(reader)
    if header is None:
        return TxDataset([], (), encoders or {})
    required = [schema.account, schema.time, schema.amount, schema.label, *schema.categorical, *schema.numeric]
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")

    parsed, skipped = [], 0
    for r in rows:
        try:
            t = float(r[schema.time])
            label = int(float(r[schema.label]))
            nums = [_float_or_nan(r[schema.amount])] + [_float_or_nan(r[c]) for c in schema.numeric]
        except (TypeError, ValueError):
            skipped += 1
            continue
        if label not in (0, 1) or (not math.isnan(nums[0]) and nums[0] < 0):
            skipped += 1
            continue
        parsed.append((r[schema.account], t, label, nums, [r[c] for c in schema.categorical]))

    if encoders is None:
        encoders = {c: CategoryEncoder.fit([p[4][j] for p in parsed]) for j, c in enumerate(schema.categorical)}
    numeric = impute_medians(np.array([p[3] for p in parsed]).reshape(len(parsed), 1 + len(schema.numeric)))

    groups = defaultdict(list)
    for i, p in enumerate(parsed):
        groups[p[0]].append(i)
    names = ("log_amount",) + tuple(schema.numeric) + tuple(schema.categorical)
    sequences, short = [], 0
    L = schema.seq_len
    for account in sorted(groups):
        idx = sorted(groups[account], key=lambda i: parsed[i][1])
        if len(idx) < L:
            short += 1
            continue
        for w in range(len(idx) // L):
            win = idx[w * L:(w + 1) * L]
            amounts = numeric[win, 0]
            cols = [np.log1p(amounts)[:, None], numeric[win, 1:]]
            cats = np.array([[encoders[c].encode(parsed[i][4][j]) for j, c in enumerate(schema.categorical)]
                             for i in win], dtype=np.float64).reshape(L, len(schema.categorical))
            cols.append(cats)
            steps = np.concatenate(cols, axis=1)
            label = int(max(parsed[i][2] for i in win))
            sequences.append(TxSequence(account, steps, label, parsed[win[0]][1], parsed[win[-1]][1], amounts))
    return TxDataset(sequences, names, encoders, skipped, short)


__all__ = [
    "CategoryEncoder",
    "SchemaError",
    "Stage4Config",
    "Stage4Model",
    "TransactionRecord",
    "TxDataset",
    "TxSchema",
    "TxSequence",
    "bilstm_forward",
    "impute_medians",
    "ingest_transactions_csv",
    "lstm_cell",
    "planted_sequences",
    "score_transaction",
    "temporal_attention",
    "train_stage4",
]
