"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tape, no_tape


@dataclass
class GradCheckReport:
    max_rel_error: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def worst(self):
        return max(self.max_rel_error, default=0.0)

    @property
    def passed(self):
        return self.worst < self.tol


def _scalar(out):
    v = float(np.asarray(out.values).reshape(-1)[0]) if out.size == 1 else None
    if v is None:
        raise NumericError("finite_diff_check needs a scalar-valued function")
    if not np.isfinite(v):
        raise NumericError(f"function value is not finite: {v}")
    return v


def finite_diff_check(f, leaves, epsilon=1e-5, tol=1e-4, floor=1e-6, max_elements=None, seed=0):
    """Compare tape gradients of ``f(*leaves)`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``, so
    components smaller than ``floor`` are effectively compared absolutely.
    ``max_elements`` subsamples large leaves with a seeded generator.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.grad = None
    with Tape() as tape:
        out = f(*leaves)
    _scalar(out)
    tape.backward(out)
    analytic = [np.zeros_like(l.values) if l.grad is None else l.grad.copy() for l in leaves]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    with no_tape():
        for leaf, ga in zip(leaves, analytic):
            flat = leaf.values.reshape(-1)
            idx = np.arange(flat.size)
            if max_elements is not None and flat.size > max_elements:
                idx = np.sort(rng.choice(flat.size, max_elements, replace=False))
            worst = 0.0
            gflat = ga.reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = _scalar(f(*leaves))
                flat[i] = orig - epsilon
                fm = _scalar(f(*leaves))
                flat[i] = orig
                num = (fp - fm) / (2.0 * epsilon)
                a = gflat[i]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
            report.max_rel_error.append(worst)
    return report
