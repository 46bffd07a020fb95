"""``gearnet`` command-line interface.

Subcommands: ``build-graph``, ``pretrain``, ``train`` and ``eval``. Every
command is deterministic given ``--seed``; errors print one line to
standard error and exit with status 1.
"""

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .config import describe_keys, load_config
from .encoder import GearNet
from .errors import GearNetError, VersionMismatch
from .graph import build_graph, graph_to_tensors
from .nn import ParameterStore, make_optimizer
from .pretrain import METHODS, PretrainModel, masked_residue_accuracy, pretrain
from .runtime import rng_stream
from .struct_io import (DatasetRecord, load_tensors, read_jsonl_dataset, read_pdb,
                        save_tensors)
from .tasks import TASK_KINDS, TaskHead, evaluate, read_prediction_table, fmax, aupr_pair, accuracy, train_task

METRICS = ("fmax", "aupr", "accuracy")
META_PREFIX = "meta."


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _read_records(path):
    if path is None:
        raise CliError("no input dataset given")
    lower = path.lower()
    if lower.endswith((".pdb", ".ent")):
        return [DatasetRecord(read_pdb(path))]
    return read_jsonl_dataset(path)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else ("" if v is None else v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _default_log(out_path):
    return os.path.splitext(out_path)[0] + ".csv"


def _save_store(path, store, meta=None):
    tensors = dict(store.state_dict())
    for key, value in (meta or {}).items():
        tensors[META_PREFIX + key] = np.atleast_1d(np.asarray(value, dtype=np.float64))
    save_tensors(path, tensors)


def _load_store(path):
    tensors = load_tensors(path)
    meta = {k[len(META_PREFIX):]: v for k, v in tensors.items() if k.startswith(META_PREFIX)}
    store = ParameterStore.from_state_dict({k: v for k, v in tensors.items() if not k.startswith(META_PREFIX)})
    return store, meta


def _encoder_only(store, encoder):
    """Copy of the encoder tensors of ``store`` (pretraining heads dropped)."""
    encoder.check_params(store)
    out = ParameterStore()
    for name in encoder.param_shapes():
        out.add(name, store[name].copy())
    return out


def _emit(obj):
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_build_graph(args):
    cfg = load_config(args.config)
    gcfg = cfg.graph_config()
    records = _read_records(args.input)
    tensors = {}
    counts = np.zeros(gcfg.num_relations, dtype=np.int64)
    nodes = edges = 0
    for k, rec in enumerate(records):
        g = build_graph(rec.structure, gcfg)
        tensors.update(graph_to_tensors(g, prefix=f"graph{k}."))
        counts += np.bincount(g.edges[:, 2], minlength=gcfg.num_relations)
        nodes += g.n
        edges += g.m
    save_tensors(args.output, tensors)
    _emit({"proteins": len(records), "nodes": int(nodes), "edges": int(edges),
           "relations": gcfg.num_relations, "relation_counts": counts.tolist()})
    return 0


def cmd_pretrain(args):
    if args.method not in METHODS:
        raise CliError(f"unknown pretraining method {args.method!r}; valid methods: {', '.join(METHODS)}")
    cfg = load_config(args.config)
    cfg.pretrain.method = args.method
    seed = cfg.train.seed if args.seed is None else args.seed
    records = _read_records(args.data or cfg.paths.dataset)
    gcfg = cfg.graph_config()
    graphs = [build_graph(r.structure, gcfg) for r in records]
    p = cfg.pretrain
    encoder = GearNet(cfg.encoder_config(), gcfg)
    model = PretrainModel(p.method, encoder, cfg.contrastive_config(), cfg.selfpred_config())
    store = model.init_params(ParameterStore(), rng_stream(seed, "init"))
    batch_size = min(cfg.pretrain_batch_size(), len(graphs))
    steps = p.steps if p.steps is not None else p.epochs * (len(graphs) // batch_size)
    trace = pretrain(model, store, graphs, make_optimizer(p.optimizer, p.lr), steps, batch_size,
                     seed, fixed_samples=p.fixed_samples)
    out = args.out or cfg.paths.checkpoint
    _write_csv(args.log or _default_log(out), ["step", "loss"], trace)
    _save_store(out, store)
    summary = {"method": p.method, "steps": steps, "final_loss": trace[-1][1] if trace else None}
    if p.method == "residue_type":
        summary["masked_accuracy"] = masked_residue_accuracy(model, store, graphs, seed)
    _emit(summary)
    return 0


def _split(records, graphs, name):
    keep = [k for k, r in enumerate(records) if r.split == name]
    return [graphs[k] for k in keep], [records[k] for k in keep]


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.train.seed if args.seed is None else args.seed
    records = _read_records(args.data or cfg.paths.dataset)
    if not records or records[0].labels is None:
        raise CliError("training data needs labelled records")
    gcfg = cfg.graph_config()
    graphs = [build_graph(r.structure, gcfg) for r in records]
    encoder = GearNet(cfg.encoder_config(dropout=cfg.train.dropout), gcfg)
    head = TaskHead(encoder.output_dim, len(records[0].labels), args.task)
    init_rng = rng_stream(seed, "init")
    if args.init is not None:
        pre, _ = _load_store(args.init)
        store = _encoder_only(pre, encoder)
    else:
        store = encoder.init_params(ParameterStore(), init_rng)
    head.init_params(store, init_rng)
    t = cfg.train
    train_set = _split(records, graphs, "train")
    valid_set = _split(records, graphs, "valid")
    log = train_task(encoder, head, store, train_set[0], train_set[1], make_optimizer(t.optimizer, t.lr),
                     t.epochs, t.batch_size, seed, valid=valid_set if valid_set[0] else None)
    out = args.out or cfg.paths.checkpoint
    _write_csv(args.log or _default_log(out), ["epoch", "loss", "metric", "value"], log.to_rows())
    _save_store(out, log.best_store, {"multiclass": float(args.task == "multiclass")})
    _emit({"task": args.task, "epochs": t.epochs, "best_epoch": log.best_epoch,
           "final_loss": log.epochs[-1]["loss"] if log.epochs else None})
    return 0


def cmd_eval(args):
    if args.metric not in METRICS:
        raise CliError(f"unknown metric {args.metric!r}; valid metrics: {', '.join(METRICS)}")
    if args.pred is not None:
        pt = read_prediction_table(args.pred)
        if args.metric == "fmax":
            value = fmax(pt)
        elif args.metric == "aupr":
            value = aupr_pair(pt)
        else:
            value = accuracy(pt.scores, np.argmax(pt.truth, axis=1))
        _emit({"metric": args.metric, "value": value})
        return 0
    if args.data is None or args.ckpt is None:
        raise CliError("eval needs --pred, or both --data and --ckpt")
    cfg = load_config(args.config)
    records = [r for r in _read_records(args.data) if args.split is None or r.split == args.split]
    if not records:
        raise CliError(f"no records in split {args.split!r}")
    if records[0].labels is None:
        raise CliError("evaluation data needs labelled records")
    gcfg = cfg.graph_config()
    encoder = GearNet(cfg.encoder_config(), gcfg)
    store, meta = _load_store(args.ckpt)
    encoder.check_params(store)
    kind = "multiclass" if float(meta.get("multiclass", [0.0])[0]) else "multilabel"
    head = TaskHead(encoder.output_dim, len(records[0].labels), kind)
    last = store[f"{head.prefix}.fc2.W"] if f"{head.prefix}.fc2.W" in store else None
    if last is None or last.shape != (encoder.output_dim, head.num_outputs):
        raise VersionMismatch(f"checkpoint task head does not match {head.num_outputs} terms "
                              f"on a {encoder.output_dim}-dim encoder")
    graphs = [build_graph(r.structure, gcfg) for r in records]
    _emit(evaluate(encoder, head, store, graphs, records, args.metric))
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="gearnet",
        description="Geometry-aware relational graph encoders for protein structures.",
        epilog="Config file keys (YAML, all optional):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config (see gearnet --help for keys)")
        p.add_argument("--seed", type=int, help="seed for every RNG stream (default: train.seed)")

    p = sub.add_parser("build-graph", help="build residue graphs and write a graph cache")
    p.add_argument("--input", required=True, help="PDB file or JSONL dataset")
    p.add_argument("--output", required=True, help="graph cache path")
    common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--method", required=True, help=f"one of: {', '.join(METHODS)}")
    p.add_argument("--data", help="JSONL dataset (default: paths.dataset)")
    p.add_argument("--out", help="checkpoint path (default: paths.checkpoint)")
    p.add_argument("--log", help="loss CSV path (default: checkpoint path with .csv)")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune on a labelled dataset")
    p.add_argument("--task", required=True, choices=TASK_KINDS)
    p.add_argument("--data", help="labelled JSONL dataset (default: paths.dataset)")
    p.add_argument("--init", help="pretrained checkpoint to start the encoder from")
    p.add_argument("--out", help="checkpoint path (default: paths.checkpoint)")
    p.add_argument("--log", help="per-epoch CSV path (default: checkpoint path with .csv)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compute a metric on a prediction table or a dataset")
    p.add_argument("--metric", required=True, help=f"one of: {', '.join(METRICS)}")
    p.add_argument("--pred", help="prediction-table text file")
    p.add_argument("--data", help="labelled JSONL dataset")
    p.add_argument("--ckpt", help="fine-tuned checkpoint")
    p.add_argument("--split", help="only evaluate records of this split")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GearNetError, CliError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
