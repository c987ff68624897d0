"""Command-line pipelines: simulate, fit, eval, network, heterogeneity.

Every command computes all outputs in memory first and then writes them
atomically, so a failing run leaves no partial files behind.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, atomic_write, dumps_model, load_model
from .config import ConfigError, load_config
from .domain import DataError, DiseaseCatalog, build_catalog, dumps_jsonl, encode_records, read_jsonl
from .evaluate import AucReport, build_instances, auc_report, transfer_eval
from .inference import FitDivergence, TrainConfig, fit
from .intensity import ModelParams
from .network import cooccurrence_graph, dynamic_graph, heterogeneity_over_time, influencer_curve, static_graph
from .simulate import SimConfig, random_model, simulate_dataset

log = logging.getLogger("ddp")

_PURPOSES = {"init": 0, "split": 1, "bootstrap": 2, "simulation": 3, "truth": 4, "analytics": 5}


def derive_seed(root: int, purpose: str) -> int:
    """Independent per-purpose seed derived from the root seed."""
    return int(np.random.SeedSequence([int(root), _PURPOSES[purpose]]).generate_state(1)[0])


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write_all(out_dir, files: dict):
    for name, text in files.items():
        atomic_write(os.path.join(out_dir, name), text)


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _load_models(cfg):
    paths = _require(cfg.models, "--model")
    models = [load_model(p) for p in paths]
    kinds = [m.kind for m in models]
    names = [k if kinds.count(k) == 1 else f"{k}:{os.path.splitext(os.path.basename(p))[0]}" for k, p in zip(kinds, paths)]
    return list(zip(names, models))


def _load_dataset(cfg, catalog: DiseaseCatalog | None = None):
    records = read_jsonl(_require(cfg.data, "--data"))
    ingest = cfg.ingest
    if catalog is None:
        catalog = build_catalog(records)
    else:
        seen = {e["code"] for r in records for e in r["events"]}
        missing = sorted(c for c in seen if c not in catalog)
        if missing:
            raise DataError(f"catalog mismatch: data codes {missing[:5]} are not in the model catalog")
    seqs, _ = encode_records(records, catalog, jitter_eps=ingest["jitter_eps"], time_scale=ingest["time_scale"])
    return catalog, seqs


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(seed=derive_seed(cfg.seed, "split"), threads=int(cfg.threads), **cfg.train)


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(cfg) -> dict:
    sim_cfg = cfg.simulate
    if cfg.models:
        truth = load_model(cfg.models[0])
        F = truth.F
    else:
        K, F = int(sim_cfg["K"]), int(sim_cfg["F"])
        width = len(str(K - 1))
        catalog = DiseaseCatalog(tuple(f"D{i:0{width}d}" for i in range(K)))
        truth = random_model(
            cfg.model["kind"], catalog, F, rng=derive_seed(cfg.seed, "truth"),
            mu_range=tuple(sim_cfg["mu_range"]), density=sim_cfg["density"],
            alpha_range=tuple(sim_cfg["alpha_range"]), beta_range=tuple(sim_cfg["beta_range"]),
            branching=sim_cfg["branching"], D=cfg.model["D"], H=cfg.model["H"],
        )
    mean = np.zeros(F) if sim_cfg["context_mean"] is None else np.broadcast_to(np.asarray(sim_cfg["context_mean"], float), (F,))
    std = float(sim_cfg["context_std"])
    prefix = tuple((float(t), truth.catalog.index(code)) for t, code in sim_cfg["prefix"])
    sim = SimConfig(
        float(sim_cfg["horizon_T"]), context=lambda rng: mean + std * rng.standard_normal(F),
        max_events=int(sim_cfg["max_events"]), seed=derive_seed(cfg.seed, "simulation"), prefix=prefix,
    )
    seqs = simulate_dataset(truth, sim, int(sim_cfg["n_sequences"]))
    return {
        "data.jsonl": dumps_jsonl(seqs, truth.catalog),
        "catalog.json": truth.catalog.to_json() + "\n",
        "truth_model.json": dumps_model(truth, extra={"config": cfg.echo()}),
        "run_config.json": _dump(cfg.echo()),
    }


def cmd_fit(cfg) -> dict:
    warm = _load_models(cfg)[0][1] if cfg.models else None
    catalog, seqs = _load_dataset(cfg, warm.catalog if warm is not None else None)
    if not seqs:
        raise DataError("empty dataset")
    F = len(seqs[0].context)
    tc = _train_config(cfg)
    if warm is not None:
        init = warm
    else:
        n_events = sum(len(s) for s in seqs)
        exposure = sum(s.horizon_T for s in seqs) * catalog.K
        mu0 = max(0.5 * n_events / exposure, 1e-3) if exposure > 0 else 0.1
        init = ModelParams.initial(cfg.model["kind"], catalog, F, D=cfg.model["D"], H=cfg.model["H"],
                                   mu0=mu0, rng=derive_seed(cfg.seed, "init"))
    report = fit(seqs, tc, init)
    echo = cfg.echo()
    train_echo = {k: getattr(tc, k) for k in tc.__dataclass_fields__}
    return {
        "model.json": dumps_model(report.model, train_config=train_echo, extra={"config": echo}),
        "fit_report.json": report.to_json(config=echo) + "\n",
        "fit_metrics.csv": report.to_csv(),
        "catalog.json": catalog.to_json() + "\n",
        "run_config.json": _dump(echo),
    }


def _targets(cfg, catalog, instances):
    if cfg.target_codes:
        return [(c, catalog.index(c), True) for c in cfg.target_codes]
    return [(c, i, False) for i, c in enumerate(catalog.codes)]


def _report(model, name, seqs, cfg) -> AucReport:
    instances = build_instances(model, seqs)
    report = AucReport()
    seed = derive_seed(cfg.seed, "bootstrap")
    for code, idx, explicit in _targets(cfg, model.catalog, instances):
        labels = [inst.true_type == idx for inst in instances]
        if not explicit and (all(labels) or not any(labels)):
            log.warning("skipping %s: single-class labels", code)
            continue
        report.entries.append(auc_report(instances, idx, int(cfg.eval["n_boot"]), seed, code=code, model_name=name))
    return report


def cmd_eval(cfg) -> dict:
    models = _load_models(cfg)
    if not cfg.data and not cfg.transfer:
        raise ConfigError("--data or --transfer is required for eval")
    files = {}
    if cfg.data:
        parts = []
        for name, model in models:
            _, seqs = _load_dataset(cfg, model.catalog)
            parts.append(_report(model, name, seqs, cfg))
        files["auc.csv"] = "".join(p.to_csv(header=k == 0) for k, p in enumerate(parts))
    if cfg.transfer:
        records = read_jsonl(cfg.transfer)
        parts = []
        for name, model in models:
            targets = cfg.target_codes or list(model.catalog.codes)
            if cfg.target_codes:
                rep = transfer_eval(model, records, targets, int(cfg.eval["n_boot"]), derive_seed(cfg.seed, "bootstrap"), name)
            else:
                seqs, dropped = encode_records(records, model.catalog, drop_unknown=True)
                if not any(len(s) for s in seqs):
                    raise DataError("no events left after restricting to the model catalog")
                rep = _report(model, name, seqs, cfg)
                rep.dropped_events = dropped
            log.info("%s: dropped %d out-of-domain events", name, rep.dropped_events)
            parts.append(rep)
        files["auc_transfer.csv"] = "".join(p.to_csv(header=k == 0) for k, p in enumerate(parts))
    files["run_config.json"] = _dump(cfg.echo())
    return files


def cmd_network(cfg) -> dict:
    name, model = _load_models(cfg)[0]
    catalog, seqs = _load_dataset(cfg, model.catalog)
    pid = cfg.analytics["patient_id"]
    if pid is None:
        seq = seqs[0]
    else:
        match = [s for s in seqs if s.patient_id == str(pid)]
        if not match:
            raise DataError(f"patient {pid!r} not found")
        seq = match[0]
    times = [float(t) for t in cfg.at_times] or [e.t for e in seq.events]
    eps = float(cfg.analytics["prune_eps"])
    snaps = [dynamic_graph(model, seq, None, t, prune_eps=eps).to_dict(catalog) for t in times]
    echo = cfg.echo()
    return {
        "network_series.json": _dump({"config": echo, "patient_id": seq.patient_id, "model": name, "snapshots": snaps}),
        "static_graph.json": _dump({"config": echo, "model": name, "graph": static_graph(model, seqs, prune_eps=eps).to_dict(catalog)}),
        "cooccurrence_graph.json": _dump({"config": echo, "graph": cooccurrence_graph(seqs, catalog.K).to_dict(catalog)}),
        "run_config.json": _dump(echo),
    }


def cmd_heterogeneity(cfg) -> dict:
    _, model = _load_models(cfg)[0]
    catalog, seqs = _load_dataset(cfg, model.catalog)
    a = cfg.analytics
    seed = derive_seed(cfg.seed, "analytics")
    curve = heterogeneity_over_time(model, seqs, a["grid"], a["subsample_n"], seed, pair_budget=a["pair_budget"])
    files = {"heterogeneity.csv": curve.to_csv()}
    for code in cfg.target_codes:
        inf = influencer_curve(model, seqs, catalog.index(code), a["rel_grid"], seed, pair_budget=a["pair_budget"])
        files[f"influencer_{code}.csv"] = inf.to_csv()
    files["run_config.json"] = _dump(cfg.echo())
    return files


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "network": cmd_network,
    "heterogeneity": cmd_heterogeneity,
}


# ---------------------------------------------------------------------------
# Argument parsing


def _csv_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _float_list(text):
    try:
        return [float(x) for x in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML config file")
    common.add_argument("--data", metavar="PATH", help="JSONL event data")
    common.add_argument("--model", metavar="PATH", action="append", dest="models", help="model checkpoint (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="root random seed")
    common.add_argument("--threads", type=int, metavar="N", help="worker threads (default $DDP_THREADS or 1)")
    common.add_argument("--transfer", metavar="PATH", help="out-of-domain JSONL for eval")
    common.add_argument("--target-codes", type=_csv_list, metavar="LIST", help="comma-separated codes")
    common.add_argument("--at-times", type=_float_list, metavar="LIST", help="comma-separated times")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ddp", description="Deep diffusion process pipelines")
    parser.add_argument("--version", action="version", version=f"ddp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {
        "data": args.data, "models": args.models, "out": args.out, "seed": args.seed, "threads": args.threads,
        "transfer": args.transfer, "target_codes": args.target_codes, "at_times": args.at_times,
    }
    try:
        cfg = load_config(args.config, overrides)
        files = COMMANDS[args.command](cfg)
        _write_all(cfg.out, files)
    except (ConfigError, DataError, CheckpointError, FitDivergence, ValueError, KeyError, OSError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc).strip("'\"")}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
