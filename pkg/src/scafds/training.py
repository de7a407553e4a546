"""Full-batch training loop, parameter serialization and state hashing."""

from __future__ import annotations

import hashlib
import json
import logging

import numpy as np

from .numkernel import AdamW, Tape, Tensor

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """A loss or gradient became non-finite; ``diagnostics`` holds the last good step."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def epoch_rng(seed, epoch):
    # one independent stream per epoch so a resumed run draws the same masks
    return np.random.default_rng([int(seed), int(epoch), 0x5CAF])


def dropout(x, rate, rng):
    if rate <= 0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def fit(params, loss_fn, epochs, lr=3e-3, weight_decay=1e-4, min_lr=0.0, seed=0,
        no_decay=(), optimizer=None, start_epoch=0, name="model", stop_epoch=None):
    """Minimize ``loss_fn(epoch, rng)`` by AdamW with a cosine schedule.

    Returns ``(loss_curve, optimizer)``. Parameters are updated in place. The
    schedule spans ``epochs`` steps in total; ``start_epoch`` resumes midway
    and ``stop_epoch`` halts early without shortening the schedule.
    """
    if optimizer is None:
        optimizer = AdamW(params, lr=lr, weight_decay=weight_decay, total_steps=epochs,
                          min_lr=min_lr, no_decay=no_decay)
    curve = []
    last_good = None
    end = epochs if stop_epoch is None else min(epochs, stop_epoch)
    for epoch in range(start_epoch, end):
        optimizer.zero_grad()
        with Tape() as tape:
            loss = loss_fn(epoch, epoch_rng(seed, epoch))
        value = loss.item()
        bad = not np.isfinite(value)
        if not bad:
            tape.backward(loss)
            bad = any(p.grad is not None and not np.all(np.isfinite(p.grad)) for p in params.values())
        if bad:
            diag = {"model": name, "epoch": epoch, "loss": value,
                    "last_finite_epoch": None if last_good is None else last_good[0],
                    "last_finite_loss": None if last_good is None else last_good[1]}
            log.error("non-finite training state: %s", diag)
            raise TrainingError(f"{name}: non-finite loss or gradient at epoch {epoch}", diag)
        optimizer.step()
        last_good = (epoch, value)
        curve.append(value)
        log.debug("%s epoch %d loss %.6f", name, epoch, value)
    return curve, optimizer


def params_to_dict(params):
    return {k: {"shape": list(p.values.shape), "data": p.values.reshape(-1).tolist()}
            for k, p in sorted(params.items())}


def params_from_dict(d):
    return {k: Tensor(np.array(v["data"], dtype=np.float64).reshape(v["shape"]), requires_grad=True)
            for k, v in d.items()}


def canonical_json(obj):
    # float repr round-trips exactly, so dumps/loads is bit-preserving
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def state_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def optimizer_to_dict(opt):
    s = opt.state_dict()
    return {"step_count": s["step_count"],
            "m": {k: v.reshape(-1).tolist() for k, v in sorted(s["m"].items())},
            "v": {k: v.reshape(-1).tolist() for k, v in sorted(s["v"].items())}}
