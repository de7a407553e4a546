"""On-disk datasets, checkpoints and the train / attribute / SAR drivers."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attribution import CaseInputs, StateError, TrainedModels, build_record
from .cooccur import write_events_csv
from .fusion import BILINEAR, FusionParams, Stage5Config, forensic_logit, neighbor_mean, train_stage5, write_scores_csv
from .graphcore import cooccurrence_weights, read_graph_csv, write_edges_csv, write_nodes_csv
from .metrics import stratified_split
from .numkernel import AdamW, Tensor, no_tape, ops
from .numkernel.ops import _sigmoid
from .pipeline import VARIANTS, PipelineConfig, TrackBData, institution_pagerank, variant_setup
from .sargen import (
    Thresholds,
    candidate_assertions,
    factual_accuracy,
    grounding_rate,
    render_report,
    summary_csv,
)
from .seqmodel import CategoryEncoder, Stage4Config, Stage4Model, score_transaction, train_stage4
from .seqmodel import ingest_transactions_csv
from .stgat import Stage3Config, Stage3Model, snapshot_inputs, stage3_no_decay, train_stage3
from .synthnet import TX_COLUMNS, TX_SCHEMA, ConfigError, generate_snapshots, generate_transactions, generate_world
from .training import FORMAT_VERSION, optimizer_to_dict, params_from_dict, params_to_dict, state_hash

log = logging.getLogger(__name__)

EPOCH_ZERO = dt.date(2023, 1, 1)
ACTIVITY_TYPE = "fraud-contagion-exposure"


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# datasets ------------------------------------------------------------------

def write_dataset(config: PipelineConfig, out):
    """Generate snapshots, the event log and account histories under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    snaps = generate_snapshots(config.synth, config.n_quarters, config.drift)
    for q, g in enumerate(snaps):
        write_nodes_csv(g, out / f"nodes_q{q}.csv")
        write_edges_csv(g, out / f"edges_q{q}.csv")
    write_events_csv(generate_world(config.synth).events, out / "events.csv")
    last = snaps[-1]
    labels = last.labels()
    rows = generate_transactions([n.id for n in last.nodes], labels, config.synth.seed)
    with open(out / "transactions.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, TX_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    summary = {"seed": config.synth.seed, "n_nodes": last.n_nodes, "n_edges": last.n_edges,
               "positive_rate": float(labels.mean()), "n_quarters": config.n_quarters,
               "n_transactions": len(rows), "config": config.to_dict()}
    _write_json(out / "manifest.json", summary)
    return summary


@dataclass
class Dataset:
    track_b: TrackBData
    tx_path: Path
    manifest: dict


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    if not (data_dir / "manifest.json").is_file():
        raise FileNotFoundError(f"{data_dir}: no manifest.json; run 'scafds generate' first")
    manifest = _read_json(data_dir / "manifest.json")
    snaps = [read_graph_csv(data_dir / f"nodes_q{q}.csv", data_dir / f"edges_q{q}.csv", timestamp=q)
             for q in range(manifest["n_quarters"])]
    labels = snaps[-1].labels()
    return Dataset(TrackBData(snaps, labels, [n.id for n in snaps[-1].nodes]), data_dir / "transactions.csv",
                   manifest)


def institution_of(account):
    return account.split(":", 1)[0]


def _standardize_steps(seqs, mean, std):
    return [(s.steps - mean) / std for s in seqs]


# checkpoints -----------------------------------------------------------------

def _checkpoint(kind, variant, seed, config, params, optimizer=None, **extra):
    body = {"params": params_to_dict(params),
            "optimizer": None if optimizer is None else optimizer_to_dict(optimizer)}
    d = {"format": FORMAT_VERSION, "kind": kind, "variant": variant, "seed": seed, "config": config,
         **body, **extra}
    d["state_hash"] = state_hash(body)
    return d


def _load_checkpoint(path, kind):
    path = Path(path)
    if not path.is_file():
        raise StateError(f"{path}: checkpoint not found; run 'scafds train' first")
    d = _read_json(path)
    if d.get("format") != FORMAT_VERSION or d.get("kind") != kind:
        raise StateError(f"{path}: not a {kind} checkpoint of format {FORMAT_VERSION}")
    return d


def _restore_optimizer(params, state, lr, weight_decay, total, min_lr, no_decay):
    opt = AdamW(params, lr=lr, weight_decay=weight_decay, total_steps=total, min_lr=min_lr, no_decay=no_decay)
    opt.load_state_dict({"step_count": state["step_count"],
                         "m": {k: np.array(v) for k, v in state["m"].items()},
                         "v": {k: np.array(v) for k, v in state["v"].items()}})
    return opt


# training --------------------------------------------------------------------

@dataclass
class TrainOutcome:
    complete: bool
    state_hash: str
    stage3_epoch: int
    out: Path


def _load_sequences(tx_path, encoders=None):
    if not Path(tx_path).is_file():
        raise FileNotFoundError(f"{tx_path}: transaction file missing")
    return ingest_transactions_csv(tx_path, TX_SCHEMA, encoders)


def _train_encoders(tx_path, train_set):
    """Category codes fitted on rows of training-split institutions only."""
    if not Path(tx_path).is_file():
        raise FileNotFoundError(f"{tx_path}: transaction file missing")
    with open(tx_path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if institution_of(r[TX_SCHEMA.account]) in train_set]
    return {c: CategoryEncoder.fit([r[c] for r in rows]) for c in TX_SCHEMA.categorical}


def train_models(data_dir, config: PipelineConfig, seed, variant="full", out="model", stop_after=None,
                 resume=None):
    """Train all stages on a generated dataset and write checkpoints to ``out``.

    ``stop_after`` halts the graph stage after that many epochs and writes a
    resumable checkpoint; ``resume`` continues from one.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ablation {variant!r}")
    ds = load_dataset(data_dir)
    data = ds.track_b
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    splits = stratified_split(data.labels, seed)
    setup = variant_setup(variant, data, config, seed)
    c3 = setup.stage3
    cfg3 = asdict(c3)

    graphs, feats = snapshot_inputs(setup.snapshots)
    model = Stage3Model(c3, feats[0].shape[1], graphs[0].edge_features.shape[1], seed)
    optimizer, start, prefix = None, 0, []
    if resume is not None:
        ck = _load_checkpoint(resume, "stage3")
        if ck["seed"] != seed or ck["variant"] != variant or ck["config"] != cfg3:
            raise StateError("checkpoint was written by a run with a different seed, variant or config")
        model.load_params(params_from_dict(ck["params"]))
        optimizer = _restore_optimizer(model.params, ck["optimizer"], c3.lr, c3.weight_decay, c3.epochs,
                                       c3.min_lr, stage3_no_decay(model.params))
        start, prefix = ck["epoch"], ck["loss_curve"]
    r3 = train_stage3(setup.snapshots, data.labels, splits[0], setup.pairs, c3, seed, model, optimizer,
                      start, stop_epoch=stop_after)
    curve3 = prefix + r3.loss_curve
    done3 = start + len(r3.loss_curve)
    ck3 = _checkpoint("stage3", variant, seed, cfg3, model.params, model.optimizer, epoch=done3,
                      total_epochs=c3.epochs, loss_curve=curve3, n_features=feats[0].shape[1],
                      edge_dim=graphs[0].edge_features.shape[1])
    _write_json(out / "stage3.json", ck3)
    if done3 < c3.epochs:
        log.info("graph stage halted at epoch %d of %d", done3, c3.epochs)
        return TrainOutcome(False, ck3["state_hash"], done3, out)

    # transaction stage
    train_set = {data.ids[i] for i in splits[0]}
    tx = _load_sequences(ds.tx_path, _train_encoders(ds.tx_path, train_set))
    seqs = list(tx)
    train_seqs = [s for s in seqs if institution_of(s.account) in train_set]
    if not train_seqs:
        raise StateError("no transaction windows belong to training institutions")
    stacked = np.concatenate([s.steps for s in train_seqs])
    mean, std = stacked.mean(axis=0), stacked.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    background = np.median((stacked - mean) / std, axis=0)
    for s, z in zip(train_seqs, _standardize_steps(train_seqs, mean, std)):
        s.steps = z
    c4 = config.stage4
    m4 = train_stage4(train_seqs, c4, seed)
    ck4 = _checkpoint("stage4", variant, seed, asdict(c4), m4.params, m4.optimizer,
                      n_features=stacked.shape[1], mean=mean.tolist(), std=std.tolist(),
                      background=background.tolist(), feature_names=list(tx.feature_names),
                      encoders={k: e.codes for k, e in tx.encoders.items()}, loss_curve=m4.loss_curve)
    _write_json(out / "stage4.json", ck4)

    s_tx = institution_tx_scores(data.ids, seqs, m4, mean, std)
    last = setup.snapshots[-1]
    ck5 = None
    if variant in ("gcn", "gat"):
        scores, s_f, pr = r3.scores, r3.scores, np.zeros(last.n_nodes)
    else:
        c5 = setup.stage5
        r5 = train_stage5(r3.embeddings, s_tx, last.edge_index(), data.labels, splits[0], setup.pairs, c5, seed)
        pr = institution_pagerank(last, setup.uses_edges, config.damping)
        s_f = r5.s_forensic
        scores = _sigmoid(s_f + c5.gamma * pr)
        ck5 = _checkpoint("stage5", variant, seed, asdict(c5), r5.params.tensors(), loss_curve=r5.loss_curve)
        _write_json(out / "stage5.json", ck5)

    write_scores_csv(out / "scores.csv", data.ids, scores, s_f, pr)
    with open(out / "loss_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "loss"])
        for name, curve in (("stage3", curve3), ("stage4", m4.loss_curve),
                            ("stage5", [] if ck5 is None else ck5["loss_curve"])):
            for e, v in enumerate(curve):
                w.writerow([name, e, repr(float(v))])
    hashes = {"stage3": ck3["state_hash"], "stage4": ck4["state_hash"],
              "stage5": None if ck5 is None else ck5["state_hash"]}
    final = state_hash(hashes)
    _write_json(out / "manifest.json", {"seed": seed, "variant": variant, "data": str(data_dir),
                                        "config": config.to_dict(), "stage_hashes": hashes, "state_hash": final})
    return TrainOutcome(True, final, done3, out)


def institution_tx_scores(ids, seqs, model, mean, std):
    """Highest window score per institution; institutions without windows get 0."""
    pos = {k: i for i, k in enumerate(ids)}
    out = np.zeros(len(ids))
    if not seqs:
        return out
    X = np.stack([(s.steps - mean) / std for s in seqs])
    s, _ = score_transaction(X, model)
    for seq, v in zip(seqs, np.atleast_1d(s)):
        i = pos.get(institution_of(seq.account))
        if i is not None:
            out[i] = max(out[i], float(v))
    return out


# loading trained models ------------------------------------------------------

@dataclass
class LoadedModels:
    variant: str
    seed: int
    config: PipelineConfig
    embeddings: np.ndarray
    stage4: Stage4Model
    fusion: FusionParams | None
    fusion_mode: str
    tx_mean: np.ndarray
    tx_std: np.ndarray
    background: np.ndarray
    feature_names: tuple
    encoders: dict
    scores: np.ndarray
    s_tx: np.ndarray


def load_models(model_dir, ds: Dataset):
    model_dir = Path(model_dir)
    if not (model_dir / "manifest.json").is_file():
        raise StateError(f"{model_dir}: no completed training run found")
    man = _read_json(model_dir / "manifest.json")
    config = PipelineConfig.from_dict(man["config"])
    seed, variant = man["seed"], man["variant"]
    data = ds.track_b
    ck3 = _load_checkpoint(model_dir / "stage3.json", "stage3")
    ck4 = _load_checkpoint(model_dir / "stage4.json", "stage4")
    setup = variant_setup(variant, data, config, seed)
    m3 = Stage3Model(Stage3Config(**ck3["config"]), ck3["n_features"], ck3["edge_dim"], seed)
    m3.load_params(params_from_dict(ck3["params"]))
    graphs, feats = snapshot_inputs(setup.snapshots)
    with no_tape():
        emb = m3.encode(graphs, feats).values
    c4 = Stage4Config(**ck4["config"])
    m4 = Stage4Model(ck4["n_features"], c4.hidden, c4.attention_dim, seed)
    m4.load_params(params_from_dict(ck4["params"]))
    mean, std = np.array(ck4["mean"]), np.array(ck4["std"])
    encoders = {k: CategoryEncoder(v) for k, v in ck4["encoders"].items()}
    seqs = list(_load_sequences(ds.tx_path, encoders))
    s_tx = institution_tx_scores(data.ids, seqs, m4, mean, std)
    fusion, mode = None, BILINEAR
    last = setup.snapshots[-1]
    if variant in ("gcn", "gat"):
        with no_tape():
            scores = ops.sigmoid(m3.logits(Tensor(emb))).values
    else:
        ck5 = _load_checkpoint(model_dir / "stage5.json", "stage5")
        c5 = Stage5Config(**ck5["config"])
        p = params_from_dict(ck5["params"])
        fusion = FusionParams(p["fusion.M"], p["fusion.w"], p["fusion.proj"], c5.gamma, c5.margin, c5.tau_fco)
        mode = c5.mode
        src, dst = last.edge_index()
        with no_tape():
            c_c = neighbor_mean(emb, src, dst, last.n_nodes)
            s_f = ops.sigmoid(forensic_logit(s_tx, emb, c_c, fusion, mode)).values
        pr = institution_pagerank(last, setup.uses_edges, config.damping)
        scores = _sigmoid(s_f + c5.gamma * pr)
    return LoadedModels(variant, seed, config, emb, m4, fusion, mode, mean, std, np.array(ck4["background"]),
                        tuple(ck4["feature_names"]), encoders, scores, s_tx)


# cases, attribution and reports ----------------------------------------------

def day_to_date(t):
    return (EPOCH_ZERO + dt.timedelta(days=int(math.floor(t)))).isoformat()


@dataclass
class Case:
    inputs: CaseInputs
    account: str
    metadata: dict


def select_cases(models: LoadedModels, ds: Dataset, k, top_amounts=3):
    """The ``k`` highest-risk institutions, each explained through its riskiest account window."""
    data = ds.track_b
    seqs = list(_load_sequences(ds.tx_path, models.encoders))
    by_inst = {}
    for s in seqs:
        by_inst.setdefault(institution_of(s.account), []).append(s)
    order = np.lexsort((np.arange(len(models.scores)), -models.scores))
    last = data.snapshots[-1]
    src, dst = last.edge_index()
    f = cooccurrence_weights(last) if last.n_edges else np.zeros(0)
    cases = []
    for v in order:
        if len(cases) == k:
            break
        inst = data.ids[v]
        windows = by_inst.get(inst)
        if not windows:
            continue
        X = np.stack([(s.steps - models.tx_mean) / models.tx_std for s in windows])
        s, alpha = score_transaction(X, models.stage4)
        j = int(np.argmax(np.atleast_1d(s)))
        seq = windows[j]
        top = np.argsort(-alpha[j], kind="mergesort")[:top_amounts]
        meta = {"subject_id": inst, "account": seq.account, "activity_type": ACTIVITY_TYPE,
                "amounts": [round(float(seq.amounts[t]), 2) for t in sorted(top)],
                "date_range": [day_to_date(seq.start_time), day_to_date(seq.end_time)],
                "risk_score": float(models.scores[v]), "s_tx": float(np.atleast_1d(s)[j])}
        into = np.flatnonzero(dst == v)
        neighbors = [(int(src[e]), float(f[e])) for e in into]
        names = [data.ids[int(src[e])] for e in into]
        steps = (seq.steps - models.tx_mean) / models.tx_std
        cases.append(Case(CaseInputs(inst, steps, neighbors, int(v), names), seq.account, meta))
    return cases


def attribution_models(models: LoadedModels):
    return TrainedModels(models.stage4, models.fusion, models.embeddings, models.background,
                         models.feature_names, models.fusion_mode)


def attribute_cases(model_dir, data_dir, k, out, target="s_tx", mode="exact", seed=0):
    ds = load_dataset(data_dir)
    models = load_models(model_dir, ds)
    tm = attribution_models(models)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for case in select_cases(models, ds, k):
        rec = build_record(case.inputs, tm, target, mode, seed=seed)
        rec.metadata = dict(case.metadata)
        _write_json(out / f"{case.inputs.case_id}.json", rec.to_dict())
        records.append(rec)
    return records


def truth_fields(tx_path, account, top_steps):
    """Reference field values read straight from the raw transaction rows."""
    with open(tx_path, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["account"] == account]
    rows.sort(key=lambda r: float(r["time"]))
    return {"subject_id": institution_of(account),
            "date_range": [day_to_date(float(rows[0]["time"])), day_to_date(float(rows[-1]["time"]))],
            "amounts": [round(float(rows[t]["amount"]), 2) for t in top_steps]}


@dataclass
class SarRun:
    reports: list
    rates: object
    per_case: list
    factual_accuracy: float | None
    compliance_rate: float


def generate_sars(model_dir, data_dir, k, out, thresholds=None, target="s_tx"):
    thresholds = thresholds or Thresholds()
    ds = load_dataset(data_dir)
    models = load_models(model_dir, ds)
    tm = attribution_models(models)
    out = Path(out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    reports, per_case, pairs, truths, ids = [], [], [], [], []
    for case in select_cases(models, ds, k):
        rec = build_record(case.inputs, tm, target, "exact")
        cands = candidate_assertions(rec, thresholds)
        emitted = [a for a in cands if a.passed_threshold]
        suppressed = [a for a in cands if not a.passed_threshold]
        report = render_report(case.metadata, emitted, suppressed)
        with open(out / "reports" / f"{case.inputs.case_id}.json", "w") as fh:
            fh.write(report.to_json())
        alpha = np.array([a for _, a in rec.layer3])
        top = sorted(np.argsort(-alpha, kind="mergesort")[:len(case.metadata["amounts"])])
        truths.append(truth_fields(ds.tx_path, case.account, top))
        reports.append(report)
        per_case.append(grounding_rate([(cands, emitted)]))
        pairs.append((cands, emitted))
        ids.append(case.inputs.case_id)
    if not pairs:
        raise StateError("no cases with transaction history to report on")
    rates = grounding_rate(pairs)
    with open(out / "sar_summary.csv", "w") as fh:
        fh.write(summary_csv(ids, per_case, rates))
    acc = factual_accuracy(reports, truths)
    compliance = float(np.mean([r.compliant for r in reports]))
    _write_json(out / "sar_metrics.json", {
        "seed": models.seed, "variant": models.variant, "cases": ids,
        "grounding": {str(k): v for k, v in rates.per_layer.items()}, "overall": rates.overall,
        "factual_accuracy": acc, "compliance_rate": compliance,
        "thresholds": asdict(thresholds)})
    return SarRun(reports, rates, per_case, acc, compliance)


__all__ = [
    "ACTIVITY_TYPE",
    "Dataset",
    "LoadedModels",
    "SarRun",
    "TrainOutcome",
    "attribute_cases",
    "generate_sars",
    "institution_tx_scores",
    "load_dataset",
    "load_models",
    "select_cases",
    "train_models",
    "truth_fields",
    "write_dataset",
]
