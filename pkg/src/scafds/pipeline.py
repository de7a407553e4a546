"""End-to-end institution scoring shared by the evaluation harness and the CLI."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .fusion import ADDITIVE, Stage5Config, train_stage5
from .graphcore import pagerank, shuffle_edge_features
from .metrics import stratified_split
from .numkernel.ops import _sigmoid
from .seqmodel import Stage4Config
from .stgat import MEAN, NODE_ONLY, Stage3Config, pair_supervision_from_graph, train_stage3
from .synthnet import ConfigError, SynthConfig, generate_snapshots

VARIANTS = ("full", "noedge", "nofusion", "notemporal", "shuffled", "gcn", "gat")
DISPLAY = {
    "full": "SCAFDS",
    "noedge": "SCAFDS-NoEdge",
    "nofusion": "SCAFDS-NoFusion",
    "notemporal": "SCAFDS-NoTemporal",
    "shuffled": "SCAFDS-ShuffledEdge",
    "gcn": "GCN",
    "gat": "GAT (node-only)",
}


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_quarters: int = 2
    drift: float = 0.05
    stage3: Stage3Config = field(default_factory=Stage3Config)
    stage4: Stage4Config = field(default_factory=lambda: Stage4Config(hidden=16, attention_dim=8, epochs=20,
                                                                       batch_size=256))
    stage5: Stage5Config = field(default_factory=Stage5Config)
    seeds: tuple = (0, 1, 2, 3, 4)
    models: tuple = VARIANTS
    n_zero_pairs: int = 2000
    damping: float = 0.85
    tau1_percentile: float = 70.0
    tau2: float = 0.05
    sar_cases: int = 10
    out: str = "out"

    def __post_init__(self):
        if self.n_quarters < 1:
            raise ConfigError("n_quarters must be at least 1")
        if self.drift < 0:
            raise ConfigError("drift must be nonnegative")
        unknown = set(self.models) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown models: {sorted(unknown)}")
        if not 0.0 < self.damping < 1.0:
            raise ConfigError("damping must lie in (0, 1)")
        if not 0.0 < self.tau1_percentile < 100.0:
            raise ConfigError("tau1_percentile must lie in (0, 100)")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        nested = {"synth": SynthConfig, "stage3": Stage3Config, "stage4": Stage4Config, "stage5": Stage5Config}
        kw = {}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for k, v in d.items():
            if k == "synth":
                kw[k] = SynthConfig.from_dict(v)
            elif k in nested:
                try:
                    kw[k] = nested[k](**v)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad {k} settings: {exc}") from exc
            elif k in ("seeds", "models"):
                kw[k] = tuple(v)
            else:
                kw[k] = v
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self):
        def clean(x):
            if isinstance(x, tuple):
                return [clean(v) for v in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x
        return clean(asdict(self))


PROFILES = {
    "desk": {},
    "quick": {
        "synth": {"n_institutions": 120, "n_edges": 900},
        "stage3": {"epochs": 20, "heads": 2, "head_dim": 4, "hidden": 8},
        "stage4": {"epochs": 3, "hidden": 8, "attention_dim": 4, "batch_size": 64},
        "stage5": {"epochs": 30},
        "n_zero_pairs": 200,
        "seeds": [0, 1, 2],
        "sar_cases": 4,
    },
    # the full-size recipe; far too slow for one core
    "reference": {
        "stage3": {"heads": 8, "head_dim": 32, "hidden": 128, "steps": 4, "epochs": 300, "lr": 3e-3},
        "stage4": {"hidden": 128, "epochs": 40, "batch_size": 512},
        "seeds": list(range(10)),
    },
}


def profile_config(name, overrides=None):
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    d = json.loads(json.dumps(PROFILES[name]))
    base = PipelineConfig().to_dict()
    for k, v in d.items():
        if isinstance(v, dict):
            base[k].update(v)
        else:
            base[k] = v
    for k, v in (overrides or {}).items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k].update(v)
        else:
            base[k] = v
    return PipelineConfig.from_dict(base)


@dataclass
class TrackBData:
    snapshots: list
    labels: np.ndarray
    ids: list


def prepare_data(config: PipelineConfig):
    snaps = generate_snapshots(config.synth, config.n_quarters, config.drift)
    return TrackBData(snaps, snaps[-1].labels(), [n.id for n in snaps[-1].nodes])


@dataclass
class VariantRun:
    name: str
    scores: np.ndarray
    s_forensic: np.ndarray
    pagerank: np.ndarray
    stage3: object = None
    stage5: object = None
    snapshots: list = None


def _pagerank_scores(g, weights, damping):
    return pagerank(g, damping=damping, weights=weights)


@dataclass
class VariantSetup:
    stage3: Stage3Config
    stage5: Stage5Config
    snapshots: list
    uses_edges: bool
    pairs: object


def variant_setup(name, data: TrackBData, config: PipelineConfig, seed):
    """Stage configs, input snapshots and pair supervision for one variant."""
    if name not in VARIANTS:
        raise ConfigError(f"unknown model {name!r}")
    c3 = config.stage3
    c5 = config.stage5
    snaps = data.snapshots
    uses_edges = name not in ("noedge", "gcn", "gat")
    if name == "shuffled":
        snaps = [shuffle_edge_features(g, seed * 1000 + q) for q, g in enumerate(snaps)]
    if name == "noedge":
        c3 = replace(c3, mode=NODE_ONLY, fco_weight=0.0)
        c5 = replace(c5, fco_weight=0.0)
    elif name == "notemporal":
        c3 = replace(c3, temporal=False)
    elif name == "nofusion":
        c5 = replace(c5, mode=ADDITIVE)
    elif name == "gcn":
        c3 = replace(c3, mode=MEAN, temporal=False, fco_weight=0.0)
    elif name == "gat":
        c3 = replace(c3, mode=NODE_ONLY, temporal=False, fco_weight=0.0)
    pairs = pair_supervision_from_graph(snaps[-1], config.n_zero_pairs, seed) if uses_edges else None
    return VariantSetup(c3, c5, snaps, uses_edges, pairs)


def institution_pagerank(g, uses_edges, damping):
    return _pagerank_scores(g, "cooccurrence" if uses_edges else "uniform", damping)


def run_variant(name, data: TrackBData, config: PipelineConfig, seed, splits=None, stage3_cache=None):
    """Train one model variant and return institution risk scores for all nodes.

    ``stage3_cache`` lets variants that share the same graph stage (full and
    nofusion) reuse one trained encoder.
    """
    setup = variant_setup(name, data, config, seed)
    splits = splits or stratified_split(data.labels, seed)
    train_idx = splits[0]
    c5 = setup.stage5
    snaps = setup.snapshots
    last = snaps[-1]
    pairs = setup.pairs
    key = "encoder" if name in ("full", "nofusion") else None
    if key and stage3_cache is not None and key in stage3_cache:
        r3 = stage3_cache[key]
    else:
        r3 = train_stage3(snaps, data.labels, train_idx, pairs, setup.stage3, seed)
        if key and stage3_cache is not None:
            stage3_cache[key] = r3

    if name in ("gcn", "gat"):
        pr = np.zeros(last.n_nodes)
        return VariantRun(name, r3.scores, r3.scores, pr, r3, None, snaps)

    r5 = train_stage5(r3.embeddings, None, last.edge_index(), data.labels, train_idx, pairs, c5, seed)
    pr = institution_pagerank(last, setup.uses_edges, config.damping)
    scores = _sigmoid(r5.s_forensic + c5.gamma * pr)
    return VariantRun(name, scores, r5.s_forensic, pr, r3, r5, snaps)
