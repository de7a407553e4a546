"""Synthetic interbank networks with planted, noisily observed risk.

Each institution carries latent risk rates (SAR filing, non-performing loans,
fraud incidence). Labels come from a nonlinear composite of the latent rates,
edge window features from the latent SAR rates of both endpoints, and the
node features a model sees are noisy reports of those rates. The edge channel
therefore carries information about a node's risk that its own features only
partly reveal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .cooccur import EventSource, FraudEvent, FraudEventLog
from .graphcore import NODE_FEATURES, WINDOW_COLUMNS, InterbankGraph, ras_estimate, standardize
from .seqmodel import TxSchema


class ConfigError(ValueError):
    pass


RISK_FEATURES = ("sar_rate", "npl", "fraud_rate")


@dataclass(frozen=True)
class SynthConfig:
    n_institutions: int = 1000
    n_edges: int = 20000
    label_percentile: float = 85.0
    edge_noise_std: float = 0.02
    seed: int = 0
    composite_weights: tuple = (1.0, 1.0, 1.0)
    # std of reporting noise on the observed risk rates, in units of each rate's spread
    report_noise: float = 1.5
    # self-reported SAR filing rates are the least reliable report
    sar_report_noise: float = 3.0
    # log-normal total assets; heavier tails concentrate exposures in a core
    assets_sigma: float = 1.2
    # log-normal multiplicative noise on the RAS prior matrix
    prior_sigma: float = 2.0
    tier1_beta: tuple = (5.0, 40.0)
    npl_beta: tuple = (2.0, 30.0)
    lcr_beta: tuple = (20.0, 10.0)
    fraud_beta: tuple = (2.0, 40.0)
    sar_beta: tuple = (0.5, 8.0)
    # synthetic event log: expected events per institution = sar_rate * event_scale
    event_scale: float = 60.0
    horizon_days: int = 730

    def __post_init__(self):
        if self.n_institutions < 2:
            raise ConfigError("need at least two institutions")
        if not 0.0 < self.label_percentile < 100.0:
            raise ConfigError("label_percentile must lie strictly between 0 and 100")
        if self.edge_noise_std < 0:
            raise ConfigError("edge_noise_std must be nonnegative")
        if self.report_noise < 0 or self.sar_report_noise < 0:
            raise ConfigError("reporting noise must be nonnegative")
        if not 0 <= self.n_edges <= self.n_institutions * (self.n_institutions - 1):
            raise ConfigError("n_edges exceeds the number of ordered institution pairs")
        if len(self.composite_weights) != len(RISK_FEATURES):
            raise ConfigError("composite_weights needs one weight per risk feature")
        for name in ("tier1_beta", "npl_beta", "lcr_beta", "fraud_beta", "sar_beta"):
            a, b = getattr(self, name)
            if a <= 0 or b <= 0:
                raise ConfigError(f"{name} parameters must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else v
        for k in ("n_institutions", "n_edges", "seed", "horizon_days"):
            if k in kw:
                kw[k] = int(kw[k])
        return cls(**kw)

    @classmethod
    def from_file(cls, path):
        """Read a JSON object or ``key = value`` lines."""
        with open(path) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            data = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"cannot parse config line {line!r}")
                k, v = (s.strip() for s in line.split("=", 1))
                data[k] = json.loads(v) if v[:1] in "[{0123456789-." or v in ("true", "false") else v
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class SyntheticWorld:
    """A generated snapshot plus the latent quantities behind it."""

    graph: InterbankGraph
    raw_features: np.ndarray
    latent: dict
    composite: np.ndarray
    threshold: float
    events: FraudEventLog = field(repr=False)


def _streams(seed, k=8):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(k)]


def composite_score(latent, weights):
    """Signed-square composite over z-scored latent risk rates."""
    total = np.zeros_like(latent[RISK_FEATURES[0]])
    for w, name in zip(weights, RISK_FEATURES):
        z = standardize(latent[name][:, None])[0][:, 0]
        total += w * z * np.abs(z)
    return total


def edge_window_features(sar_src, sar_dst, noise_std, rng=None, n_windows=len(WINDOW_COLUMNS)):
    """clip(mean endpoint SAR rate + independent noise per window, 0, 1)."""
    base = (np.asarray(sar_src, dtype=np.float64) + np.asarray(sar_dst, dtype=np.float64)) / 2.0
    base = np.repeat(base[..., None], n_windows, axis=-1)
    if noise_std > 0:
        if rng is None:
            raise ValueError("a generator is required when noise_std > 0")
        base = base + rng.normal(0.0, noise_std, base.shape)
    return np.clip(base, 0.0, 1.0)


def _exposure_edges(cfg, assets, rng):
    n = cfg.n_institutions
    lend = assets * rng.uniform(0.5, 1.5, n)
    borrow = assets * rng.uniform(0.5, 1.5, n)
    borrow *= lend.sum() / borrow.sum()
    prior = rng.lognormal(0.0, cfg.prior_sigma, (n, n))
    X = ras_estimate(lend, borrow, forbid_diagonal=True, tol=1e-8, prior=prior)
    k = cfg.n_edges
    if k == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
    np.fill_diagonal(X, -np.inf)
    flat = np.argpartition(X.ravel(), -k)[-k:]
    flat.sort()
    src, dst = np.unravel_index(flat, X.shape)
    return src.astype(np.int64), dst.astype(np.int64), X[src, dst]


def _event_log(cfg, ids, sar, rng):
    counts = rng.poisson(sar * cfg.event_scale)
    events = []
    sources = list(EventSource)
    for i, c in enumerate(counts):
        times = rng.integers(0, cfg.horizon_days, c)
        kinds = rng.integers(0, len(sources), c)
        events.extend(FraudEvent(int(t), ids[i], sources[k]) for t, k in zip(times, kinds))
    return FraudEventLog(events)


def generate_world(cfg: SynthConfig) -> SyntheticWorld:
    r_nodes, r_edges, r_noise, r_report, r_events = _streams(cfg.seed)[:5]
    n = cfg.n_institutions

    assets = r_nodes.lognormal(0.0, cfg.assets_sigma, n)
    latent = {
        "tier1": r_nodes.beta(*cfg.tier1_beta, n),
        "npl": r_nodes.beta(*cfg.npl_beta, n),
        "lcr": r_nodes.beta(*cfg.lcr_beta, n),
        "fraud_rate": r_nodes.beta(*cfg.fraud_beta, n),
        "sar_rate": r_nodes.beta(*cfg.sar_beta, n),
    }
    composite = composite_score(latent, cfg.composite_weights)
    threshold = float(np.percentile(composite, cfg.label_percentile))
    labels = (composite >= threshold).astype(np.int64)

    observed = dict(latent)
    for name in RISK_FEATURES:
        scale = cfg.sar_report_noise if name == "sar_rate" else cfg.report_noise
        noise = r_report.normal(0.0, scale * latent[name].std(), n)
        observed[name] = np.clip(latent[name] + noise, 0.0, 1.0)
    raw = np.column_stack([assets] + [observed[f] for f in NODE_FEATURES[1:]])
    model_view = raw.copy()
    model_view[:, 0] = np.log(model_view[:, 0])
    features = standardize(model_view)[0]

    src, dst, exposure = _exposure_edges(cfg, assets, r_edges)
    ef = edge_window_features(latent["sar_rate"][src], latent["sar_rate"][dst], cfg.edge_noise_std, r_noise)

    ids = [f"inst{i:05d}" for i in range(n)]
    graph = InterbankGraph.from_arrays(ids, features, src, dst, exposure, ef, labels, timestamp=0)
    events = _event_log(cfg, ids, latent["sar_rate"], r_events)
    return SyntheticWorld(graph, raw, {"total_assets": assets, **latent}, composite, threshold, events)


def generate_network(cfg: SynthConfig) -> InterbankGraph:
    return generate_world(cfg).graph


def generate_snapshots(cfg: SynthConfig, n_quarters: int, drift: float = 0.0):
    """Quarterly snapshots over a fixed topology.

    Every normalized node feature follows an independent Gaussian random walk
    with step std ``drift``; latent SAR rates move along the same walk (scaled
    by their spread) and edge features are recomputed from them. Exposures are
    perturbed multiplicatively each quarter.
    """
    if n_quarters < 1:
        raise ConfigError("n_quarters must be at least 1")
    if drift < 0:
        raise ConfigError("drift must be nonnegative")
    world = generate_world(cfg)
    base = world.graph
    snaps = [base]
    if n_quarters == 1:
        return snaps
    rng = _streams(cfg.seed)[6]
    ids = [nd.id for nd in base.nodes]
    src, dst = base.edge_index()
    x0 = base.node_matrix()
    sar0 = world.latent["sar_rate"]
    sar_col = NODE_FEATURES.index("sar_rate")
    walk = np.zeros_like(x0)
    for q in range(1, n_quarters):
        step = rng.normal(0.0, 1.0, x0.shape) * drift
        walk = walk + step
        x = x0 + walk
        sar = np.clip(sar0 + walk[:, sar_col] * sar0.std(), 0.0, 1.0)
        ef = edge_window_features(sar[src], sar[dst], cfg.edge_noise_std, rng)
        exposure = base.exposure() * np.exp(rng.normal(0.0, drift, base.n_edges))
        snaps.append(InterbankGraph.from_arrays(ids, x, src, dst, exposure, ef, base.labels(), timestamp=q))
    return snaps


TX_COLUMNS = ("account", "time", "amount", "label", "time_of_day", "day_of_week", "gap_hours", "merchant_risk",
              "counterparty", "tx_type", "geo", "device", "channel")
TX_SCHEMA = TxSchema(categorical=("counterparty", "tx_type", "geo", "device", "channel"),
                     numeric=("time_of_day", "day_of_week", "gap_hours", "merchant_risk"))


def generate_transactions(ids, labels, seed=0, accounts_per_institution=2, seq_len=32,
                          p_fraud_flagged=0.5, p_fraud_other=0.05, burst=3):
    """Synthetic account histories, one window of ``seq_len`` rows per account.

    Accounts at labelled institutions are more likely to carry a fraud burst:
    a few consecutive night-time transfers with large amounts, a rare
    geography and an unseen device. Rows inside the burst are labelled 1.
    Returns a list of row dicts keyed by ``TX_COLUMNS``.
    """
    rng = np.random.default_rng([int(seed), 0x7C5])
    rows = []
    for inst, lab in zip(ids, labels):
        p = p_fraud_flagged if lab else p_fraud_other
        for a in range(accounts_per_institution):
            account = f"{inst}:acct{a}"
            fraud = rng.random() < p
            start = int(rng.integers(0, seq_len - burst + 1)) if fraud else -1
            t = float(rng.uniform(0.0, 700.0))
            home_device = f"D{int(rng.integers(0, 3))}"
            for k in range(seq_len):
                gap = float(rng.exponential(12.0))
                in_burst = fraud and start <= k < start + burst
                if in_burst:
                    gap = float(rng.uniform(0.02, 0.2))
                t += gap / 24.0
                amount = float(np.exp(rng.normal(4.0, 1.0)))
                hour = float(np.clip(rng.normal(13.0, 3.0), 0.0, 23.99))
                geo = f"G{int(rng.choice(5, p=[0.5, 0.2, 0.15, 0.1, 0.05]))}"
                device = home_device
                risk = float(rng.beta(2.0, 8.0))
                if in_burst:
                    amount *= 15.0
                    hour = float(rng.uniform(1.0, 4.0))
                    geo = "G9"
                    device = "D_new"
                    risk = float(rng.beta(8.0, 2.0))
                rows.append({
                    "account": account,
                    "time": repr(round(t, 6)),
                    "amount": repr(round(amount, 2)),
                    "label": int(in_burst),
                    "time_of_day": repr(round(hour, 4)),
                    "day_of_week": int(t) % 7,
                    "gap_hours": repr(round(gap, 4)),
                    "merchant_risk": repr(round(risk, 4)),
                    "counterparty": f"C{int(rng.integers(0, 40))}",
                    "tx_type": f"T{int(rng.choice(4, p=[0.6, 0.2, 0.15, 0.05]))}",
                    "geo": geo,
                    "device": device,
                    "channel": f"H{int(rng.integers(0, 3))}",
                })
    return rows
