"""Command-line entry point: ``diffembed {train,eval-link,eval-classify,query,hop-sweep}``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainConfig
from .errors import ConfigError, DataError, NumericalError
from .evaluation import (
    METRICS,
    derive_seeds,
    evaluate_classification,
    fit_embeddings,
    hop_sweep,
    label_matrix,
    link_prediction_run,
    top_k_similar,
)
from .graph import build_transition, load_graph, read_labels, read_texts
from .io import RunManifest, atomic_write, read_config_file
from .model import (
    final_embeddings,
    forward_views,
    load_embeddings,
    save_checkpoint,
    save_embeddings,
)
from .text import build_vocabulary
from .training import train

log = logging.getLogger("diffembed")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
THREADS_ENV = "DIFFEMBED_THREADS"
MODES = {"full": "concat", "text-only": "text_only", "no-diffusion": "concat"}
LABEL_RATIO_GRID = (0.1, 0.3, 0.5, 0.7)

# flag name -> (parser, built-in default); keys double as config-file keys
SETTINGS = {
    "dim": (int, 200),
    "hops": (int, 4),
    "lambda_decay": (float, 0.5),
    "alpha": (str, "1,1,0.3,0.3"),
    "neg": (int, 1),
    "lr": (float, 1e-3),
    "epochs": (int, 200),
    "batch": (int, 64),
    "seed": (int, 0),
    "nonlinearity": (str, "tanh"),
    "mode": (str, "full"),
    "min_count": (int, 1),
    "undirected": (lambda v: str(v).lower() in ("1", "true", "yes", "on"), False),
    "repeats": (int, 10),
    "metric": (str, "cosine"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ratio(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1), got {text}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value file; command-line flags override it")
    common.add_argument("--out-dir", default=".", help="directory for output files (default: current)")
    common.add_argument("--threads", type=int, default=None, help=f"worker threads (default: ${THREADS_ENV} or CPU count)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    data = _Parser(add_help=False)
    data.add_argument("--edges", help="SRC<TAB>DST[<TAB>WEIGHT] lines")
    data.add_argument("--texts", help="VERTEX<TAB>TEXT lines")
    data.add_argument("--labels", help="VERTEX<TAB>LABEL[,LABEL...] lines")
    data.add_argument("--undirected", action="store_const", const=True, default=None)
    data.add_argument("--keep-case", action="store_true", help="do not lowercase tokens")

    model = _Parser(add_help=False)
    model.add_argument("--dim", type=int, help="total embedding width, split evenly (default 200)")
    model.add_argument("--hops", type=int, help="diffusion hops H (default 4)")
    model.add_argument("--lambda-decay", dest="lambda_decay", type=float, help="hop weight decay (default 0.5)")
    model.add_argument("--alpha", help="term weights tt,ss,st,ts (default 1,1,0.3,0.3)")
    model.add_argument("--neg", type=int, help="negative samples per term (default 1)")
    model.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    model.add_argument("--epochs", type=int, help="training epochs (default 200)")
    model.add_argument("--batch", type=int, help="edges per step (default 64)")
    model.add_argument("--seed", type=int, help="master seed (default 0)")
    model.add_argument("--nonlinearity", choices=["tanh", "relu", "identity"])
    model.add_argument("--mode", choices=sorted(MODES))
    model.add_argument("--min-count", dest="min_count", type=int, help="rarer tokens map to <unk> (default 1)")

    evalp = _Parser(add_help=False)
    evalp.add_argument("--repeats", type=int, help="runs per setting (default 10)")
    evalp.add_argument("--metric", choices=METRICS)

    parser = _Parser(prog="diffembed", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common, data, model], help="train embeddings on a graph")
    p.add_argument("--loss-csv", help="path for the epoch,mean_loss trace (default OUT_DIR/loss.csv)")
    p.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N epochs")

    p = sub.add_parser("eval-link", parents=[common, data, model, evalp], help="link prediction AUC")
    p.add_argument("--train-ratio", type=_ratio, action="append", required=True, help="repeatable; share of edges kept for training")
    p.add_argument("--null-model", action="store_true", help="score random Gaussian embeddings instead")

    p = sub.add_parser("eval-classify", parents=[common, data, model, evalp], help="vertex classification Macro-F1")
    p.add_argument("--embeddings", help="use a saved embedding file instead of training")
    p.add_argument("--labeled-ratio", type=_ratio, action="append", help="repeatable (default 0.1,0.3,0.5,0.7)")
    p.add_argument("--reg", type=float, default=1.0, help="L2 strength of the classifier")

    p = sub.add_parser("query", parents=[common], help="most similar vertices")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--vertex", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--snippet", type=int, default=60, help="characters of text to show")
    p.add_argument("--out", help="write CSV here instead of standard output")

    p = sub.add_parser("hop-sweep", parents=[common, data, model, evalp], help="link prediction AUC per hop count")
    p.add_argument("--hops-list", type=_int_list, required=True, help="e.g. 1,2,3,4,5")
    p.add_argument("--train-ratio", type=_ratio, required=True)
    return parser


# -- configuration ----------------------------------------------------------


def resolve_settings(args) -> dict:
    """Flag value, else config-file value, else built-in default."""
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(SETTINGS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, (conv, default) in SETTINGS.items():
        value = getattr(args, key, None)
        if value is None and key in file_values:
            try:
                value = conv(file_values[key])
            except ValueError:
                raise ConfigError(f"config key {key}: bad value {file_values[key]!r}") from None
        out[key] = default if value is None else value
    if out["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {sorted(MODES)}")
    if out["metric"] not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}")
    if out["repeats"] < 1:
        raise ConfigError("repeats must be >= 1")
    return out


def train_config(settings: dict) -> TrainConfig:
    dim = settings["dim"]
    if dim < 2 or dim % 2:
        raise ConfigError(f"--dim must be a positive even number (both halves are used), got {dim}")
    try:
        alphas = [float(x) for x in str(settings["alpha"]).split(",")]
    except ValueError:
        raise ConfigError(f"--alpha must be four numbers, got {settings['alpha']!r}") from None
    if len(alphas) != 4:
        raise ConfigError(f"--alpha must be four numbers tt,ss,st,ts, got {settings['alpha']!r}")
    hops = 1 if settings["mode"] == "no-diffusion" else settings["hops"]
    return TrainConfig(
        d_s=dim // 2,
        d_t=dim // 2,
        hops=hops,
        lambda_decay=settings["lambda_decay"],
        alpha_tt=alphas[0],
        alpha_ss=alphas[1],
        alpha_st=alphas[2],
        alpha_ts=alphas[3],
        negatives=settings["neg"],
        learning_rate=settings["lr"],
        batch_size=settings["batch"],
        epochs=settings["epochs"],
        seed=settings["seed"],
        nonlinearity=settings["nonlinearity"],
        embed_mode=MODES[settings["mode"]],
        min_count=settings["min_count"],
    )


def thread_count(args) -> int:
    if args.threads is not None:
        value = args.threads
    elif os.environ.get(THREADS_ENV):
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ConfigError(f"${THREADS_ENV} must be an integer") from None
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise ConfigError("--threads must be >= 1")
    return value


def _require_inputs(args, labels=False) -> None:
    if not args.edges or not args.texts:
        raise UsageError("--edges and --texts are required")
    if labels and not args.labels:
        raise UsageError("--labels is required")


def _load(args, settings):
    return load_graph(
        args.edges, args.texts, args.labels, directed=not settings["undirected"], lowercase=not args.keep_case
    )


def _manifest(args, settings, config=None) -> RunManifest:
    snapshot = dict(settings)
    if config is not None:
        snapshot["train_config"] = config.to_dict()
    snapshot["threads"] = thread_count(args)
    m = RunManifest(args.command, snapshot, settings.get("seed"))
    for role in ("edges", "texts", "labels", "embeddings", "config"):
        m.add_input(role, getattr(args, role, None))
    return m


def _write_csv(path, header, rows) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- commands ---------------------------------------------------------------


def cmd_train(args) -> int:
    _require_inputs(args)
    settings = resolve_settings(args)
    config = train_config(settings)
    out = Path(args.out_dir)
    manifest = _manifest(args, settings, config)
    with manifest.phase("load"):
        graph = _load(args, settings)
        tensor = build_transition(graph, config.hops, config.lambda_decay, config.max_row_entries)
    log.info("graph: %d vertices, %d directed edges", graph.num_vertices, graph.num_edges)

    vocab = build_vocabulary(graph, config.min_count)
    trace = []
    ckpt = out / "checkpoint.npz"

    def on_epoch(epoch, loss, params):
        trace.append((epoch, repr(loss)))
        log.debug("epoch %d mean objective %.6f", epoch, loss)
        if args.checkpoint_every and epoch % args.checkpoint_every == 0:
            save_checkpoint(ckpt, params, tensor.hop_weights, vocab, config, graph.names)

    with manifest.phase("train"):
        result = train(graph, tensor, config, vocab=vocab, on_epoch=on_epoch)
    with manifest.phase("write"):
        views = forward_views(result.params, result.data.doc_matrix, tensor, config.nonlinearity)
        emb = final_embeddings(views, config.embed_mode)
        save_embeddings(out / "embeddings.txt", graph.names, emb)
        save_checkpoint(ckpt, result.params, tensor.hop_weights, result.data.vocab, config, graph.names)
        _write_csv(args.loss_csv or out / "loss.csv", ["epoch", "mean_loss"], trace)
    manifest.write(out / "manifest.json")
    if trace:
        log.info("final mean objective %s", trace[-1][1])
    log.info("wrote %s", out / "embeddings.txt")
    return EXIT_OK


def cmd_eval_link(args) -> int:
    _require_inputs(args)
    settings = resolve_settings(args)
    config = train_config(settings)
    ratios = args.train_ratio
    manifest = _manifest(args, settings, config)
    manifest.data["config"]["train_ratios"] = ratios
    graph = _load(args, settings)
    rows = []
    seeds = derive_seeds(config.seed, settings["repeats"])
    with manifest.phase("evaluate"):
        for ratio in ratios:
            aucs = []
            for run, s in enumerate(seeds):
                a = link_prediction_run(graph, config, ratio, s, settings["metric"], args.null_model)
                aucs.append(a)
                rows.append((run, ratio, repr(a)))
            log.info("train ratio %.2f: mean AUC %.4f (std %.4f)", ratio, np.mean(aucs), np.std(aucs))
    out = Path(args.out_dir)
    _write_csv(out / "link_auc.csv", ["run", "train_ratio", "auc"], rows)
    manifest.write(out / "manifest.json")
    return EXIT_OK


def cmd_eval_classify(args) -> int:
    settings = resolve_settings(args)
    ratios = args.labeled_ratio or list(LABEL_RATIO_GRID)
    if not args.labels:
        raise UsageError("--labels is required")
    out = Path(args.out_dir)
    if args.embeddings:
        manifest = _manifest(args, settings)
        names, emb = load_embeddings(args.embeddings)
        index = {n: i for i, n in enumerate(names)}
        found = read_labels(args.labels, index)
        labels = [found.get(n, ()) for n in names]
    else:
        _require_inputs(args, labels=True)
        config = train_config(settings)
        manifest = _manifest(args, settings, config)
        graph = _load(args, settings)
        with manifest.phase("train"):
            emb, _ = fit_embeddings(graph, config)
        save_embeddings(out / "embeddings.txt", graph.names, emb)
        labels = graph.labels
    y, classes = label_matrix(labels)
    if len(classes) < 2:
        raise DataError("need at least two distinct labels")
    log.info("%d labelled vertices, %d classes", int(y.any(axis=1).sum()), len(classes))
    rows = []
    with manifest.phase("evaluate"):
        for ratio in ratios:
            scores = evaluate_classification(emb, labels, ratio, settings["repeats"], settings["seed"], args.reg)
            rows.extend((run, ratio, repr(s)) for run, s in enumerate(scores))
            log.info("labeled ratio %.2f: mean Macro-F1 %.4f", ratio, np.mean(scores))
    _write_csv(out / "classify_f1.csv", ["run", "labeled_ratio", "macro_f1"], rows)
    manifest.write(out / "manifest.json")
    return EXIT_OK


def _snippet(text: str, width: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= width else text[: max(width - 3, 0)] + "..."


def cmd_query(args) -> int:
    names, emb = load_embeddings(args.embeddings)
    texts = read_texts(args.texts)
    index = {n: i for i, n in enumerate(names)}
    if args.vertex not in index:
        raise DataError(f"unknown vertex {args.vertex!r}")
    if not 0 < args.k < len(names):
        raise ConfigError(f"--k must lie in [1, {len(names) - 1}]")
    hits = top_k_similar(emb, index[args.vertex], args.k)
    rows = [(r, names[j], repr(s), _snippet(texts.get(names[j], ""), args.snippet)) for r, (j, s) in enumerate(hits, 1)]
    header = ["rank", "vertex", "score", "text_snippet"]
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return EXIT_OK


def cmd_hop_sweep(args) -> int:
    _require_inputs(args)
    settings = resolve_settings(args)
    config = train_config(settings)
    if any(h < 1 for h in args.hops_list):
        raise ConfigError("every entry of --hops-list must be >= 1")
    manifest = _manifest(args, settings, config)
    manifest.data["config"]["hops_list"] = args.hops_list
    manifest.data["config"]["train_ratio"] = args.train_ratio
    graph = _load(args, settings)
    with manifest.phase("evaluate"):
        table = hop_sweep(graph, config, args.hops_list, args.train_ratio, settings["repeats"], settings["metric"])
    for h, mean, std in table:
        log.info("H=%d: mean AUC %.4f (std %.4f)", h, mean, std)
    out = Path(args.out_dir)
    _write_csv(out / "hop_sweep.csv", ["H", "mean_auc", "std_auc"], [(h, repr(m), repr(s)) for h, m, s in table])
    manifest.write(out / "manifest.json")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval-link": cmd_eval_link,
    "eval-classify": cmd_eval_classify,
    "query": cmd_query,
    "hop-sweep": cmd_hop_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"diffembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=getattr(args, "log_level", "INFO"), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"diffembed: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"diffembed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"diffembed: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
