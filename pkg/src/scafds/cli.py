"""Command-line entry point: generate, train, evaluate, attribute, sar."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .attribution import StateError
from .graphcore import GraphError
from .numkernel import NumericError
from .pipeline import PROFILES, VARIANTS, PipelineConfig, profile_config
from .sargen import Thresholds
from .seqmodel import SchemaError
from .synthnet import ConfigError
from .training import TrainingError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NUMERIC = 5
EXIT_STATE = 6

log = logging.getLogger("scafds")


class UsageError(Exception):
    pass


def _config(args):
    overrides = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"{path}: config file not found")
        try:
            overrides = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config must be a JSON object")
    try:
        cfg = profile_config(args.profile, overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def _with_seed(cfg: PipelineConfig, seed):
    if seed is None:
        return cfg
    d = cfg.to_dict()
    d["synth"]["seed"] = seed
    d["seeds"] = [seed]
    return PipelineConfig.from_dict(d)


def cmd_generate(args):
    from .workflow import write_dataset

    cfg = _config(args)
    if args.seed is not None:
        d = cfg.to_dict()
        d["synth"]["seed"] = args.seed
        cfg = PipelineConfig.from_dict(d)
    s = write_dataset(cfg, args.out)
    print(f"nodes {s['n_nodes']}  edges {s['n_edges']}  positive rate {s['positive_rate']:.4f}  "
          f"transactions {s['n_transactions']}  seed {s['seed']}  -> {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .workflow import train_models

    cfg = _config(args)
    seed = 0 if args.seed is None else args.seed
    outcome = train_models(args.data, cfg, seed, args.ablation, args.out, args.stop_after, args.resume)
    status = "complete" if outcome.complete else f"halted at graph epoch {outcome.stage3_epoch}"
    print(f"train {args.ablation} seed {seed}: {status}  state {outcome.state_hash}  -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    from .evalharness import results_csv, results_table, run_ablation_suite

    cfg = _config(args)
    models = tuple(cfg.models)
    if args.models is not None:
        models = tuple(m for m in args.models.split(",") if m)
        if not models:
            raise UsageError("--models needs at least one model")
        unknown = set(models) - set(VARIANTS)
        if unknown:
            raise UsageError(f"unknown models: {', '.join(sorted(unknown))}")
    seeds = cfg.seeds if args.seed is None else (args.seed,)
    data = None
    if args.data:
        from .workflow import load_dataset
        data = load_dataset(args.data).track_b
    suite = run_ablation_suite(cfg, seeds, models, data)
    table = results_table(suite)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(results_csv(suite))
    (out / "results_table.txt").write_text(table)
    (out / "run.json").write_text(json.dumps({"seeds": list(seeds), "models": list(models),
                                              "config": cfg.to_dict()}, sort_keys=True, indent=2) + "\n")
    print(table, end="")
    return EXIT_OK


def cmd_attribute(args):
    from .workflow import attribute_cases

    records = attribute_cases(args.models_dir, args.data, args.cases, args.out, args.target, args.mode,
                              0 if args.seed is None else args.seed)
    for r in records:
        top = max(r.layer1, key=lambda kv: abs(kv[1]))
        print(f"{r.case_id}: output {r.output:.4f}  top feature {top[0]} ({top[1]:+.4f})  "
              f"edges {len(r.layer2)}")
    return EXIT_OK


def cmd_sar(args):
    from .workflow import generate_sars

    cfg = _config(args)
    th = Thresholds(cfg.tau1_percentile, cfg.tau2)
    run = generate_sars(args.models_dir, args.data, cfg.sar_cases if args.cases is None else args.cases,
                        args.out, th, args.target)

    def fmt(x):
        return "NA" if x is None else f"{x:.3f}"

    r = run.rates
    print(f"reports {len(run.reports)}  grounding L1 {fmt(r.per_layer[1])}  L2 {fmt(r.per_layer[2])}  "
          f"L3 {fmt(r.per_layer[3])}  overall {fmt(r.overall)}  factual accuracy {fmt(run.factual_accuracy)}  "
          f"compliance {run.compliance_rate:.3f}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="scafds", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="JSON file overriding the profile settings")
        sp.add_argument("--profile", default="desk", choices=sorted(PROFILES))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default)

    g = sub.add_parser("generate", help="write a synthetic network, event log and transactions")
    common(g, "data")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train all stages on a generated dataset")
    common(t, "model")
    t.add_argument("--data", default="data")
    t.add_argument("--ablation", default="full", choices=VARIANTS)
    t.add_argument("--resume", help="stage-3 checkpoint to continue from")
    t.add_argument("--stop-after", type=int, help="halt the graph stage after this many epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="multi-seed ablation table")
    common(e, "results")
    e.add_argument("--models", help="comma-separated subset of " + ",".join(VARIANTS))
    e.add_argument("--data", help="evaluate on a generated dataset instead of the configured generator")
    e.set_defaults(func=cmd_evaluate)

    for name, helptext, fn, out_default in (("attribute", "three-layer attribution records", cmd_attribute,
                                             "attribution"),
                                            ("sar", "threshold-gated SAR reports", cmd_sar, "sar")):
        a = sub.add_parser(name, help=helptext)
        common(a, out_default)
        a.add_argument("--data", default="data")
        a.add_argument("--models-dir", default="model")
        a.add_argument("--cases", type=int, default=None if name == "sar" else 10)
        a.add_argument("--target", default="s_tx", choices=("s_tx", "s_forensic"))
        if name == "attribute":
            a.add_argument("--mode", default="exact", choices=("exact", "sampled"))
        a.set_defaults(func=fn)
    return p


def main(argv=None):
    level = os.environ.get("SCAFDS_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"scafds: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, GraphError, SchemaError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_STATE


if __name__ == "__main__":
    sys.exit(main())
