"""AdamW with decoupled weight decay and a cosine-annealed learning rate."""

import math

import numpy as np


def cosine_lr(base_lr, step, total_steps, min_lr=0.0):
    if total_steps <= 0:
        return base_lr
    t = min(step, total_steps) / total_steps
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * t))


class AdamW:
    def __init__(self, params, lr=3e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4,
                 total_steps=0, min_lr=0.0, no_decay=()):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.min_lr = min_lr
        self.no_decay = set(no_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def current_lr(self):
        return cosine_lr(self.lr, self.step_count, self.total_steps, self.min_lr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        lr = self.current_lr()
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if k not in self.no_decay and self.weight_decay:
                p.values *= 1.0 - lr * self.weight_decay
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.values -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=np.float64).reshape(self.m[k].shape)
            self.v[k] = np.array(state["v"][k], dtype=np.float64).reshape(self.v[k].shape)
