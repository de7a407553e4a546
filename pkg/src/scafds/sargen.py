"""Threshold-gated suspicious activity report assertions and grounding metrics.

Assertions come from fixed templates, so an identical attribution record and
threshold set always render the same report.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

TRANSACTION_FEATURE = "transaction_feature"
COUNTERPARTY = "counterparty_relationship"
TEMPORAL = "temporal_pattern"
LAYERS = {TRANSACTION_FEATURE: 1, COUNTERPARTY: 2, TEMPORAL: 3}
REQUIRED_FIELDS = ("subject_id", "activity_type", "amounts", "date_range", "description")


@dataclass(frozen=True)
class Thresholds:
    tau1_percentile: float = 70.0
    tau2: float = 0.05
    tau3: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tau1_percentile < 100.0:
            raise ValueError("tau1_percentile must lie in (0, 100)")
        if self.tau2 < 0:
            raise ValueError("tau2 must be nonnegative")
        if self.tau3 is not None and not 0.0 < self.tau3 < 1.0:
            raise ValueError("tau3 must lie in (0, 1)")

    def temporal_cutoff(self, T):
        return 2.0 / T if self.tau3 is None else self.tau3


@dataclass(frozen=True)
class Grounding:
    layer: int
    index: int
    value: float
    threshold: float

    @property
    def ref(self):
        return f"L{self.layer}-{self.index}"


@dataclass(frozen=True)
class SarAssertion:
    kind: str
    text: str
    grounding: Grounding
    passed_threshold: bool

    def __post_init__(self):
        if self.passed_threshold and not self.grounding.value > self.grounding.threshold:
            raise ValueError("a passing assertion must exceed its threshold")


def _feature_text(name, value, g):
    direction = "raised" if value > 0 else "lowered"
    return f"Transaction feature '{name}' {direction} the fraud score by {abs(value):.4f} [{g.ref}]."


def _edge_text(edge, g):
    return (f"Counterparty exposure {edge.src} -> {edge.dst} carries fraud co-occurrence frequency "
            f"{edge.f:.3f} and contributes {edge.contribution:+.4f} to contagion amplification [{g.ref}].")


def _temporal_text(step, alpha, T, g):
    return f"Model attention peaks at step {step + 1} of {T} with weight {alpha:.3f} [{g.ref}]."


def candidate_assertions(record, thresholds=None):
    """Every candidate assertion for a record, each already marked pass or fail.

    Layer 1 offers one candidate per feature, gated on the absolute Shapley
    value against the within-case percentile cutoff. Layer 2 offers one per
    counterparty edge, gated on its co-occurrence frequency. Layer 3 offers a
    single temporal candidate per case, grounded on the peak attention weight.
    All gates are strict.
    """
    thresholds = thresholds or Thresholds()
    out = []
    if record.layer1:
        mags = np.abs([v for _, v in record.layer1])
        cut = float(np.percentile(mags, thresholds.tau1_percentile))
        for i, (name, value) in enumerate(record.layer1):
            g = Grounding(1, i, float(abs(value)), cut)
            out.append(SarAssertion(TRANSACTION_FEATURE, _feature_text(name, value, g), g, g.value > cut))
    for i, edge in enumerate(record.layer2):
        g = Grounding(2, i, float(edge.f), thresholds.tau2)
        out.append(SarAssertion(COUNTERPARTY, _edge_text(edge, g), g, g.value > thresholds.tau2))
    if record.layer3:
        alpha = np.array([a for _, a in record.layer3])
        T = len(alpha)
        t = int(np.argmax(alpha))
        cut = thresholds.temporal_cutoff(T)
        g = Grounding(3, int(record.layer3[t][0]), float(alpha[t]), cut)
        out.append(SarAssertion(TEMPORAL, _temporal_text(t, alpha[t], T, g), g, g.value > cut))
    return out


def gate_assertions(record, thresholds=None):
    """Split the candidates into (emitted, suppressed)."""
    cands = candidate_assertions(record, thresholds)
    return [a for a in cands if a.passed_threshold], [a for a in cands if not a.passed_threshold]


@dataclass
class SarReport:
    subject_id: str | None
    activity_type: str | None
    amounts: list | None
    date_range: list | None
    description: list
    grounding: list
    compliant: bool
    missing_fields: list = field(default_factory=list)
    suppressed: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _present(v):
    if v is None:
        return False
    if isinstance(v, (list, tuple, str)) and len(v) == 0:
        return False
    return True


def _gate_entry(a):
    return {"kind": a.kind, "layer": a.grounding.layer, "index": a.grounding.index,
            "value": a.grounding.value, "threshold": a.grounding.threshold, "ref": a.grounding.ref,
            "passed": a.passed_threshold}


def render_report(metadata, emitted, suppressed=()):
    """Fill the five filing fields; a missing field marks the report non-compliant."""
    if not metadata:
        raise ValueError("case metadata is empty")
    emitted = list(emitted)
    if any(not a.passed_threshold for a in emitted):
        raise ValueError("only passing assertions may enter the description")
    description = [a.text for a in emitted]
    values = {k: metadata.get(k) for k in REQUIRED_FIELDS[:-1]}
    values["description"] = description
    missing = [k for k in REQUIRED_FIELDS if not _present(values[k])]
    amounts = metadata.get("amounts")
    dates = metadata.get("date_range")
    return SarReport(
        metadata.get("subject_id"),
        metadata.get("activity_type"),
        None if amounts is None else [float(x) for x in amounts],
        None if dates is None else list(dates),
        description,
        [_gate_entry(a) for a in emitted],
        not missing,
        missing,
        [_gate_entry(a) for a in suppressed],
    )


def regate(report: SarReport):
    """Count gate violations recorded in a report: (unsound emitted, incomplete suppressed)."""
    bad_emit = sum(1 for g in report.grounding if not g["value"] > g["threshold"])
    bad_supp = sum(1 for g in report.suppressed if g["value"] > g["threshold"])
    return bad_emit, bad_supp


@dataclass(frozen=True)
class GroundingRates:
    per_layer: dict
    overall: float | None
    counts: dict

    def row(self):
        return [self.per_layer.get(k) for k in (1, 2, 3)] + [self.overall]


def grounding_rate(cases):
    """Pooled emitted/candidate rate per layer and their unweighted mean.

    ``cases`` holds (candidates, emitted) pairs of assertion lists. A layer
    without candidates is reported as None and left out of the mean.
    """
    if not cases:
        raise ValueError("no cases")
    cand = {1: 0, 2: 0, 3: 0}
    emit = {1: 0, 2: 0, 3: 0}
    for candidates, emitted in cases:
        for a in candidates:
            cand[LAYERS[a.kind]] += 1
        for a in emitted:
            emit[LAYERS[a.kind]] += 1
    per = {k: (emit[k] / cand[k] if cand[k] else None) for k in cand}
    live = [v for v in per.values() if v is not None]
    overall = float(np.mean(live)) if live else None
    return GroundingRates(per, overall, {"candidates": cand, "emitted": emit})


def _fact_fields(d):
    out = [("subject_id", d.get("subject_id")), ("date_range", tuple(d.get("date_range") or ()))]
    for i, a in enumerate(d.get("amounts") or ()):
        out.append((f"amount{i}", round(float(a), 2)))
    return out


def factual_accuracy(reports, truths):
    """Exact-match rate over subject ids, date ranges and each reported amount.

    Returns None when there is nothing to compare.
    """
    hits = total = 0
    for rep, truth in zip(reports, truths):
        got = dict(_fact_fields(rep.to_dict() if isinstance(rep, SarReport) else rep))
        for k, v in _fact_fields(truth):
            total += 1
            hits += got.get(k) == v
    return hits / total if total else None


def summary_csv(case_ids, per_case, pooled):
    """One row per case with its layer rates, then the pooled row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "layer1", "layer2", "layer3", "overall"])

    def cell(x):
        return "NA" if x is None else f"{x:.6f}"

    for cid, r in zip(case_ids, per_case):
        w.writerow([cid] + [cell(x) for x in r.row()])
    w.writerow(["ALL"] + [cell(x) for x in pooled.row()])
    return buf.getvalue()


__all__ = [
    "COUNTERPARTY",
    "Grounding",
    "GroundingRates",
    "REQUIRED_FIELDS",
    "SarAssertion",
    "SarReport",
    "TEMPORAL",
    "TRANSACTION_FEATURE",
    "Thresholds",
    "candidate_assertions",
    "factual_accuracy",
    "gate_assertions",
    "grounding_rate",
    "regate",
    "render_report",
    "summary_csv",
]
