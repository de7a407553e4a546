"""Multi-seed ablation runs, result tables and paired significance tests."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import (
    DomainError,
    WilcoxonResult,
    auprc,
    auroc,
    f1_at_validation_threshold,
    f1_score,
    midranks,
    stratified_split,
    wilcoxon_normal_p,
    wilcoxon_signed_rank,
)
from .pipeline import DISPLAY, VARIANTS, PipelineConfig, TrackBData, prepare_data, run_variant
from .training import TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunResult:
    model: str
    seed: int
    auprc: float
    auroc: float
    f1: float
    threshold: float
    failed: bool = False

    def __post_init__(self):
        if not self.failed:
            for v in (self.auprc, self.auroc, self.f1):
                if not 0.0 <= v <= 1.0:
                    raise ValueError("metrics must lie in [0, 1]")


def evaluate_scores(model, seed, scores, labels, splits):
    _, val, test = splits
    thr, f1 = f1_at_validation_threshold(scores[val], labels[val], scores[test], labels[test])
    return RunResult(model, seed, auprc(scores[test], labels[test]), auroc(scores[test], labels[test]), f1, thr)


@dataclass
class SuiteResult:
    rows: list
    comparisons: list = field(default_factory=list)

    def by_model(self, model, metric="auprc"):
        return np.array([getattr(r, metric) for r in self.rows if r.model == model and not r.failed])


COMPARISONS = (
    ("full", "noedge"),
    ("full", "nofusion"),
    ("full", "notemporal"),
    ("full", "shuffled"),
    ("full", "gcn"),
    ("full", "gat"),
    ("shuffled", "noedge"),
)


def _std(x):
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def compare(suite, a, b, metric="auprc"):
    """Paired comparison over seeds both models completed."""
    ra = {r.seed: getattr(r, metric) for r in suite.rows if r.model == a and not r.failed}
    rb = {r.seed: getattr(r, metric) for r in suite.rows if r.model == b and not r.failed}
    seeds = sorted(set(ra) & set(rb))
    if not seeds:
        return None
    x = np.array([ra[s] for s in seeds])
    y = np.array([rb[s] for s in seeds])
    w = wilcoxon_signed_rank(x, y)
    return {"a": a, "b": b, "metric": metric, "n": len(seeds), "mean_diff": float(np.mean(x - y)),
            "min_diff": float(np.min(x - y)), "statistic": w.statistic, "p_value": float(w.p_value),
            "degenerate": w.degenerate}


def run_ablation_suite(config: PipelineConfig, seeds=None, models=None, data: TrackBData | None = None):
    """Train and score every requested model on identical splits per seed."""
    seeds = tuple(config.seeds if seeds is None else seeds)
    models = tuple(config.models if models is None else models)
    if not models:
        raise ValueError("no models requested")
    data = data or prepare_data(config)
    rows = []
    for seed in seeds:
        splits = stratified_split(data.labels, seed)
        cache = {}
        for m in VARIANTS:
            if m not in models:
                continue
            t0 = time.perf_counter()
            try:
                run = run_variant(m, data, config, seed, splits, cache)
                res = evaluate_scores(m, seed, run.scores, data.labels, splits)
            except (TrainingError, FloatingPointError) as exc:
                log.error("seed %d model %s failed: %s", seed, m, exc)
                res = RunResult(m, seed, float("nan"), float("nan"), float("nan"), float("nan"), failed=True)
            rows.append(res)
            log.info("seed %d %-10s auprc %.4f (%.1fs)", seed, m, res.auprc, time.perf_counter() - t0)
    suite = SuiteResult(rows)
    present = set(models)
    for a, b in COMPARISONS:
        if a in present and b in present:
            c = compare(suite, a, b)
            if c is not None:
                suite.comparisons.append(c)
    return suite


def _fmt(x):
    return "nan" if not np.isfinite(x) else f"{x:.4f}"


def results_csv(suite: SuiteResult):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "seed", "auprc", "auroc", "f1", "threshold", "failed"])
    for r in suite.rows:
        w.writerow([r.model, r.seed, repr(r.auprc), repr(r.auroc), repr(r.f1), repr(r.threshold), int(r.failed)])
    return buf.getvalue()


def results_table(suite: SuiteResult):
    """Mean ± std per model plus the paired Wilcoxon tests against full."""
    models = [m for m in VARIANTS if any(r.model == m for r in suite.rows)]
    lines = [f"{'Model':<22}{'AUPRC':>18}{'AUROC':>18}{'F1':>18}{'Wilcoxon p':>13}{'runs':>6}"]
    p_vs_full = {c["b"]: c["p_value"] for c in suite.comparisons if c["a"] == "full"}
    for m in models:
        cells = []
        for metric in ("auprc", "auroc", "f1"):
            x = suite.by_model(m, metric)
            cells.append(f"{_fmt(np.mean(x)) if len(x) else 'nan'} ± {_fmt(_std(x))}")
        p = p_vs_full.get(m)
        n_ok = len(suite.by_model(m))
        n_all = sum(1 for r in suite.rows if r.model == m)
        lines.append(f"{DISPLAY[m]:<22}{cells[0]:>18}{cells[1]:>18}{cells[2]:>18}"
                     f"{'-' if p is None else f'{p:.4f}':>13}{f'{n_ok}/{n_all}':>6}")
    if suite.comparisons:
        lines.append("")
        lines.append("Paired AUPRC comparisons (two-sided Wilcoxon signed-rank)")
        for c in suite.comparisons:
            lines.append(f"  {DISPLAY[c['a']]} vs {DISPLAY[c['b']]}: mean diff {c['mean_diff']:+.4f}, "
                         f"min diff {c['min_diff']:+.4f}, W+ {c['statistic']:.1f}, p {c['p_value']:.4f}, n {c['n']}")
    return "\n".join(lines) + "\n"


__all__ = [
    "DomainError",
    "RunResult",
    "SuiteResult",
    "WilcoxonResult",
    "auprc",
    "auroc",
    "compare",
    "evaluate_scores",
    "f1_at_validation_threshold",
    "f1_score",
    "midranks",
    "results_csv",
    "results_table",
    "run_ablation_suite",
    "stratified_split",
    "wilcoxon_normal_p",
    "wilcoxon_signed_rank",
]
