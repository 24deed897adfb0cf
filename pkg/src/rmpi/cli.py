"""Command-line surface: train, eval, schema-pretrain, benchgen, dump-subgraph.

Exit codes: 0 success, 1 usage problem, 2 data or model error.  Every run
writes a `run_manifest.json` next to its outputs recording the resolved
flags, seed, input content digests and produced files, so identical argv
over identical inputs leaves identical manifests up to timestamps.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from .evalbench import EvalError, classify, rank_queries, recombine, write_report
from .kgstore import KGError, Triple, load_benchmark
from .numkit import NumkitError
from .rmpnet import ModelError, ModelConfig
from .schema import SchemaError, load_schema, load_vectors, pretrain, save_vectors
from .subgraph import (
    SubgraphError,
    dump_relation_view,
    extract_disclosing,
    extract_enclosing,
    to_relation_view,
)
from .trainlab import (
    SampleCache,
    TrainConfig,
    TrainError,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

CACHE_ENV = "RMPI_CACHE_DIR"
MANIFEST_FILE = "run_manifest.json"

DATA_ERRORS = (
    KGError,
    SubgraphError,
    NumkitError,
    ModelError,
    SchemaError,
    TrainError,
    EvalError,
    OSError,
)

VARIANTS = {
    "base": (False, False),
    "ne": (True, False),
    "ta": (False, True),
    "ne-ta": (True, True),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route to exit 1
        raise UsageError(f"{message}\n{self.format_usage()}")


# ------------------------------------------------------------------ manifest

def _digest_path(path: str) -> str:
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode())
                with open(full, "rb") as fh:
                    h.update(fh.read())
    else:
        with open(path, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def write_run_manifest(out_dir, command, flags, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "flags": {k: v for k, v in sorted(flags.items())},
        "seed": seed,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "inputs": {p: _digest_path(p) for p in sorted(set(inputs))},
        "outputs": sorted(outputs),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _flags(args) -> dict:
    skip = {"func"}
    out = {}
    for key, value in vars(args).items():
        if key not in skip:
            out[key] = value
    return out


# ------------------------------------------------------------------ helpers

def _model_config(args, schema_vectors=None) -> ModelConfig:
    if args.hop != args.layers:
        raise UsageError(
            f"--hop {args.hop} and --layers {args.layers} must agree: one "
            "message-passing layer runs per hop"
        )
    use_disclosing, target_attention = VARIANTS[args.variant]
    kwargs = {}
    if schema_vectors:
        # width follows whatever the pretraining exported
        any_vec = next(iter(schema_vectors.values()))
        kwargs["schema_dim"] = int(any_vec.shape[0])
    return ModelConfig(
        hops=args.hop,
        dim=args.dim,
        edge_dropout=args.dropout,
        use_disclosing=use_disclosing,
        target_attention=target_attention,
        fusion=args.fusion,
        init_mode=args.init,
        **kwargs,
    )


def _load_schema_vectors(args):
    if args.init != "schema":
        return None
    if not args.schema_vectors:
        raise UsageError("--init schema requires --schema-vectors")
    return load_vectors(args.schema_vectors)


def _parse_hits(text: str):
    try:
        values = tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"--hits expects comma-separated integers: {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise UsageError(f"--hits values must be >= 1: {text!r}")
    return values


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    schema_vectors = _load_schema_vectors(args)
    model = _model_config(args, schema_vectors)
    bench = load_benchmark(args.data)
    cache_dir = os.environ.get(CACHE_ENV)

    aucs = []
    for run in range(args.runs):
        seed = args.seed + run
        config = TrainConfig(
            model=model,
            lr=args.lr,
            batch_size=args.batch,
            margin=args.margin,
            epochs=args.epochs,
            seed=seed,
            patience=args.patience,
            num_negatives=args.negatives,
        )
        out_dir = args.out if args.runs == 1 else os.path.join(args.out, f"run{run}")
        ckpt = train(
            bench, config,
            schema_vectors=schema_vectors,
            cache_dir=cache_dir,
            workers=args.workers,
            log=lambda msg: print(msg),
        )
        save_checkpoint(ckpt, out_dir)
        outputs = [
            os.path.join(out_dir, "manifest.json"),
            os.path.join(out_dir, "params.bin"),
        ]
        inputs = [args.data] + ([args.schema_vectors] if schema_vectors else [])
        write_run_manifest(
            out_dir, "train", _flags(args), seed, inputs, outputs, started
        )
        if ckpt.best_val_auc is not None:
            aucs.append(ckpt.best_val_auc)
            print(f"run {run}: best validation auc-pr {ckpt.best_val_auc:.4f}")

    if aucs:
        print(f"mean validation auc-pr over {len(aucs)} run(s): {np.mean(aucs):.4f}")
    if args.runs > 1:
        write_report(
            {"mean_val_auc_pr": float(np.mean(aucs)) if aucs else float("nan"),
             "runs": args.runs},
            args.out, stem="summary",
        )
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    ckpt = load_checkpoint(args.ckpt)
    bench = load_benchmark(args.data)
    if not bench.test:
        raise EvalError(f"benchmark at {args.data} has no test targets")
    schema_vectors = None
    if ckpt.config.init_mode == "schema":
        if not args.schema_vectors:
            raise UsageError("checkpoint uses schema init: pass --schema-vectors")
        schema_vectors = load_vectors(args.schema_vectors)
    cache = SampleCache(bench.test_graph, ckpt.config)

    if args.task == "classify":
        result = classify(
            ckpt, bench.test_graph, bench.test, seed=args.seed,
            schema_vectors=schema_vectors, cache=cache,
        )
        metrics = {"auc_pr": result.auc_pr, "targets": len(bench.test)}
    else:
        sides = ("head", "tail") if args.side == "both" else (args.side,)
        result = rank_queries(
            ckpt, bench.test_graph, bench.test, sides=sides, num_neg=args.neg,
            seed=args.seed, hits_at=args.hits, schema_vectors=schema_vectors,
            cache=cache,
        )
        metrics = {"mrr": result.mrr, "queries": len(result.ranks)}
        for n in sorted(result.hits):
            metrics[f"hits@{n}"] = result.hits[n]

    tsv_path, json_path = write_report(metrics, args.out, stem=f"{args.task}_metrics")
    for key, value in metrics.items():
        print(f"{key}\t{value}")
    write_run_manifest(
        args.out, "eval", _flags(args), args.seed,
        [args.ckpt, args.data] + ([args.schema_vectors] if schema_vectors else []),
        [tsv_path, json_path], started,
    )
    return EXIT_OK


def cmd_schema_pretrain(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    schema = load_schema(args.schema)
    emb = pretrain(
        schema,
        dim=args.dim,
        epochs=args.epochs,
        lr=args.lr,
        margin=args.margin,
        seed=args.seed,
        batch_size=args.batch,
    )
    names = None
    if args.relations_only:
        names = sorted(schema.node_names[i] for i in schema.relation_nodes())
    save_vectors(emb, args.out, names=names)
    exported = len(names) if names is not None else len(emb.node_names)
    print(
        f"pretrained {len(emb.node_names)} nodes for {args.epochs} epochs, "
        f"final mean loss {emb.loss_history[-1]:.4f}, exported {exported} vectors"
    )
    write_run_manifest(
        args.out, "schema-pretrain", _flags(args), args.seed, [args.schema],
        [os.path.join(args.out, "manifest.json"), os.path.join(args.out, "vectors.bin")],
        started,
    )
    return EXIT_OK


def cmd_benchgen(args) -> int:
    started = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    result = recombine(args.train_from, args.test_from, args.out)

    def tally(bench):
        rows = list(bench.test_graph.triples) + list(bench.test)
        relations = {t.relation for t in rows}
        return len(relations), len(rows)

    semi_rel, semi_rows = tally(result.semi)
    fully_rel, fully_rows = tally(result.fully)
    print(
        f"semi: {semi_rel} relations over {semi_rows} triples "
        f"({len(result.unseen_relations)} unseen)"
    )
    print(f"fully: {fully_rel} relations over {fully_rows} triples")
    write_run_manifest(
        args.out, "benchgen", _flags(args), 0,
        [args.train_from, args.test_from],
        [os.path.join(args.out, "semi"), os.path.join(args.out, "fully"),
         os.path.join(args.out, "unseen_relations.txt")],
        started,
    )
    return EXIT_OK


def cmd_dump_subgraph(args) -> int:
    bench = load_benchmark(args.data)
    vocab = bench.vocab
    graph = bench.train if args.graph == "train" else bench.test_graph
    target = Triple(
        vocab.entity_id(args.head),
        vocab.relation_id(args.rel),
        vocab.entity_id(args.tail),
    )
    extract = extract_enclosing if args.kind == "enclosing" else extract_disclosing
    rvg = to_relation_view(extract(graph, target, args.hop))
    print(dump_relation_view(rvg, vocab))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> _Parser:
    parser = _Parser(prog="rmpi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_model_flags(p):
        p.add_argument("--hop", type=int, default=2, help="subgraph radius")
        p.add_argument("--layers", type=int, default=2,
                       help="message-passing layers; must equal --hop")
        p.add_argument("--dim", type=int, default=32)
        p.add_argument("--dropout", type=float, default=0.5)
        p.add_argument("--variant", choices=sorted(VARIANTS), default="base")
        p.add_argument("--fusion", choices=["sum", "conc"], default="sum")
        p.add_argument("--init", choices=["random", "schema"], default="random")
        p.add_argument("--schema-vectors", help="directory with exported vectors")

    p_train = sub.add_parser("train", help="train a model on a benchmark directory")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    add_model_flags(p_train)
    p_train.add_argument("--lr", type=float, default=0.001)
    p_train.add_argument("--batch", type=int, default=16)
    p_train.add_argument("--margin", type=float, default=10.0)
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--patience", type=int, default=10)
    p_train.add_argument("--negatives", type=int, default=1)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--runs", type=int, default=1,
                         help="repeat with derived seeds and report the mean")
    p_train.add_argument("--workers", type=int, default=1)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--out", default=".")
    p_eval.add_argument("--task", choices=["classify", "rank"], default="classify")
    p_eval.add_argument("--neg", type=int, default=49)
    p_eval.add_argument("--hits", type=_parse_hits, default=(1, 5, 10))
    p_eval.add_argument("--side", choices=["head", "tail", "both"], default="both")
    p_eval.add_argument("--schema-vectors")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_schema = sub.add_parser("schema-pretrain", help="embed an ontology TSV")
    p_schema.add_argument("--schema", required=True)
    p_schema.add_argument("--out", required=True)
    p_schema.add_argument("--dim", type=int, default=300)
    p_schema.add_argument("--epochs", type=int, default=300)
    p_schema.add_argument("--lr", type=float, default=0.02)
    p_schema.add_argument("--margin", type=float, default=1.0)
    p_schema.add_argument("--batch", type=int, default=256)
    p_schema.add_argument("--seed", type=int, default=0)
    p_schema.add_argument("--relations-only", action="store_true",
                          help="export only nodes that look like relations")
    p_schema.set_defaults(func=cmd_schema_pretrain)

    p_bench = sub.add_parser("benchgen", help="recombine two benchmark versions")
    p_bench.add_argument("--train-from", required=True)
    p_bench.add_argument("--test-from", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.set_defaults(func=cmd_benchgen)

    p_dump = sub.add_parser("dump-subgraph", help="print one extraction as text")
    p_dump.add_argument("--data", required=True)
    p_dump.add_argument("--head", required=True)
    p_dump.add_argument("--rel", required=True)
    p_dump.add_argument("--tail", required=True)
    p_dump.add_argument("--hop", type=int, default=2)
    p_dump.add_argument("--graph", choices=["train", "test"], default="train")
    p_dump.add_argument("--kind", choices=["enclosing", "disclosing"],
                        default="enclosing")
    p_dump.set_defaults(func=cmd_dump_subgraph)

    return parser


def main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --help
        code = exc.code if exc.code is not None else 0
        return int(code)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run():
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    run()
