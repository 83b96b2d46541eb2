"""Command-line entry point: ``gpoolnet {convert,train,eval,gradcheck,params}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Settings resolve as command-line flag > ``--config`` JSON file > default.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .embeddings import load_embeddings
from .errors import ConfigError, FormatError
from .gradcheck import check_model
from .model import ARCHS, DEFAULT_CHANNELS, TINY_CHANNELS, ModelSpec, build, param_count
from .text2graph import (
    DEFAULT_TERM_TAGS,
    ConversionConfig,
    clean_and_tokenize,
    convert_corpus,
    default_stopwords,
    load_dataset,
    read_corpus_csv,
    read_pos_lexicon,
    read_records,
    read_word_list,
    write_jsonl,
)
from .training import TrainConfig, evaluate, train

logger = logging.getLogger("gpoolnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

CONVERT_DEFAULTS = {
    "window": 4,
    "max_nodes": 100,
    "terms": "pos",
    "stopwords": None,
    "pos_lexicon": None,
    "distance_basis": "stream",
    "label_offset": 0,
}
TRAIN_DEFAULTS = {
    "val": None,
    "arch": "hconv_gpool_net",
    "channels": list(DEFAULT_CHANNELS),
    "epochs": 60,
    "seed": 0,
    "batch_size": 256,
    "lr": 0.001,
    "decay_factor": 0.1,
    "decay_epochs": [30, 50],
    "keep": 0.55,
    "n_classes": None,
    "embeddings": None,
    "max_nodes": None,
    "dtype": "float32",
    "renormalize_after_pool": True,
    "resume": None,
}


class UsageError(Exception):
    pass


def int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def meta_path(dataset_path):
    return f"{dataset_path}.meta.json"


def read_meta(dataset_path):
    path = meta_path(dataset_path)
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def resolve(args, defaults):
    """Merge flags over the optional JSON config over defaults."""
    config = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
        unknown = set(config) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else config.get(key, default)
    return out


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- convert -----------------------------------------------------------------


def cmd_convert(args):
    opts = resolve(args, CONVERT_DEFAULTS)
    stopwords = read_word_list(opts["stopwords"]) if opts["stopwords"] else default_stopwords()
    if opts["terms"] == "pos":
        if not opts["pos_lexicon"]:
            raise ConfigError("--terms pos needs --pos-lexicon (or use --terms all)")
        lexicon, term_tags = read_pos_lexicon(opts["pos_lexicon"]), DEFAULT_TERM_TAGS
    else:
        lexicon, term_tags = {}, None
    cfg = ConversionConfig(
        window=opts["window"],
        max_nodes=opts["max_nodes"],
        term_tags=term_tags,
        stopwords=stopwords,
        lexicon=lexicon,
        distance_basis=opts["distance_basis"],
    )
    rows, errors = read_corpus_csv(args.input, label_offset=opts["label_offset"])
    for line_no, msg in errors:
        print(f"{args.input}:{line_no}: skipped malformed row: {msg}", file=sys.stderr)
    vocab = {t.surface for _, text in rows for t in clean_and_tokenize(text, stopwords)}
    embeddings = load_embeddings(args.embeddings, vocabulary=vocab)
    graphs, stats = convert_corpus(rows, embeddings, cfg)
    stats.malformed_rows = len(errors)
    write_jsonl(graphs, args.output)
    meta = {
        "window": cfg.window,
        "max_nodes": cfg.max_nodes,
        "terms": opts["terms"],
        "distance_basis": cfg.distance_basis,
        "embeddings": os.path.abspath(args.embeddings),
        "embeddings_sha256": sha256_of(args.embeddings),
        "embed_dim": embeddings.dim,
        "stats": stats.as_dict(),
    }
    write_json(meta_path(args.output), meta)
    print(json.dumps(stats.as_dict(), sort_keys=True))
    return EXIT_OK


# -- train / eval ------------------------------------------------------------


def _data_settings(dataset_path, embeddings=None, max_nodes=None):
    meta = read_meta(dataset_path)
    emb = embeddings or meta.get("embeddings")
    cap = max_nodes or meta.get("max_nodes")
    if not emb or not cap:
        raise ConfigError(
            f"{dataset_path}: embeddings and max_nodes unknown; pass --embeddings/--max-nodes "
            "or keep the .meta.json written by convert"
        )
    return emb, int(cap)


def _load_graphs(path, embeddings_path, max_nodes):
    cfg = ConversionConfig(max_nodes=max_nodes, stopwords=frozenset())
    vocab = set()
    for r in read_records(path):
        vocab.update(n["w"] for n in r["nodes"])
    table = load_embeddings(embeddings_path, vocabulary=vocab)
    return load_dataset(path, table, cfg), table


def cmd_train(args):
    opts = resolve(args, TRAIN_DEFAULTS)
    resume = load_checkpoint(opts["resume"]) if opts["resume"] else None
    emb_path, max_nodes = _data_settings(args.train, opts["embeddings"], opts["max_nodes"])
    train_set, table = _load_graphs(args.train, emb_path, max_nodes)
    val_set = []
    if opts["val"]:
        v_cap = read_meta(opts["val"]).get("max_nodes", max_nodes)
        if v_cap != max_nodes:
            raise ConfigError(f"validation max_nodes {v_cap} != training max_nodes {max_nodes}")
        val_set, _ = _load_graphs(opts["val"], emb_path, max_nodes)
    if not train_set:
        raise ConfigError(f"{args.train}: no usable (non-empty) graphs")
    input_dim = table.dim + max_nodes
    n_classes = opts["n_classes"] or max(2, 1 + max(g.label for g in train_set + val_set))

    if resume is not None:
        spec = resume.spec
        if spec.input_dim != input_dim:
            raise ConfigError(f"checkpoint input_dim {spec.input_dim} != data input_dim {input_dim}")
    else:
        spec = ModelSpec(
            arch=opts["arch"],
            n_classes=n_classes,
            input_dim=input_dim,
            channels=tuple(opts["channels"]),
            dropout_keep=opts["keep"],
            renormalize_after_pool=opts["renormalize_after_pool"],
        )
    bad = [g.label for g in train_set + val_set if not 0 <= g.label < spec.n_classes]
    if bad:
        raise ConfigError(f"labels {sorted(set(bad))[:5]} outside [0, {spec.n_classes})")
    decay_epochs = tuple(opts["decay_epochs"])
    if opts["decay_epochs"] is TRAIN_DEFAULTS["decay_epochs"]:
        # default schedule assumes 60 epochs; drop decays a shorter run never reaches
        decay_epochs = tuple(e for e in decay_epochs if e < opts["epochs"])
    cfg = TrainConfig(
        lr0=opts["lr"],
        decay_factor=opts["decay_factor"],
        decay_epochs=decay_epochs,
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        dropout_keep=opts["keep"],
        seed=opts["seed"],
        dtype=opts["dtype"],
    )
    os.makedirs(args.out, exist_ok=True)
    inputs = {"train": args.train, "embeddings": emb_path}
    if opts["val"]:
        inputs["val"] = opts["val"]
    if opts["resume"]:
        inputs["resume"] = opts["resume"]
    manifest = {
        "tool": "gpoolnet",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "model": spec.to_dict(),
        "gpool_after_layers": list(spec.pool_after),
        "train": cfg.to_dict(),
        "data": {"max_nodes": max_nodes, "embed_dim": table.dim, "train_graphs": len(train_set),
                 "val_graphs": len(val_set)},
        "inputs": {k: {"path": os.path.abspath(v), "sha256": sha256_of(v)} for k, v in inputs.items()},
    }
    write_json(os.path.join(args.out, "manifest.json"), manifest)
    data_meta = {"embeddings": os.path.abspath(emb_path), "max_nodes": max_nodes}
    result = train(train_set, spec, cfg, val=val_set, out_dir=args.out, resume=resume,
                   data_meta=data_meta)
    last = result.log[-1] if result.log else {}
    print(f"steps={result.step} epochs_done={result.epoch + 1} "
          f"train_err={last.get('train_err', float('nan')):.6g}")
    return EXIT_OK


def cmd_eval(args):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    emb_path = args.embeddings or ckpt.data.get("embeddings")
    max_nodes = args.max_nodes or ckpt.data.get("max_nodes")
    emb_path, max_nodes = _data_settings(args.data, emb_path, max_nodes)
    data, table = _load_graphs(args.data, emb_path, max_nodes)
    if table.dim + max_nodes != ckpt.spec.input_dim:
        raise ConfigError(f"data input_dim {table.dim + max_nodes} != model input_dim {ckpt.spec.input_dim}")
    err = evaluate(data, ckpt.params(), ckpt.spec)
    print(f"error_rate={err:.6f}")
    return EXIT_OK


# -- gradcheck / params ------------------------------------------------------


def cmd_gradcheck(args):
    widths = args.widths or list(TINY_CHANNELS)
    results = check_model(args.arch, widths=widths, seed=args.seed, gate=not args.no_gate, tol=args.tol)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        note = f"  ({r.note})" if r.note else ""
        print(f"{status} {r.name:<16} rel_err={r.rel_err:.3e} |grad|={r.analytic_norm:.3e}{note}")
    ok = all(r.passed for r in results)
    print("all groups passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_params(args):
    channels = args.channels or list(DEFAULT_CHANNELS)
    spec = ModelSpec(arch=args.arch, n_classes=args.n_classes, input_dim=args.input_dim,
                     channels=tuple(channels))
    counts = param_count(build(spec, seed=0))
    if args.json:
        print(json.dumps({"arch": spec.arch, **counts.as_dict()}, sort_keys=True))
        return EXIT_OK
    print(f"{'group':<12}{'params':>14}")
    for group, n in counts.groups.items():
        print(f"{group:<12}{n:>14,}")
    print(f"{'total':<12}{counts.total:>14,}")
    print(f"gpool overhead: {counts.gpool_overhead:,} parameters "
          f"({100 * counts.overhead_ratio:.4f}% over the network without gPool, "
          f"{100 * counts.overhead_share:.4f}% of total)")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="gpoolnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gpoolnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a (label, text) CSV into a graph dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--terms", choices=("pos", "all"))
    p.add_argument("--stopwords")
    p.add_argument("--pos-lexicon")
    p.add_argument("--distance-basis", choices=("stream", "terms"))
    p.add_argument("--label-offset", type=int, help="subtract from every CSV label (1 for 1-based labels)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("train", help="train a network on a converted dataset")
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--channels", type=int_list)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay-factor", type=float)
    p.add_argument("--decay-epochs", type=int_list)
    p.add_argument("--keep", type=float, help="dropout keep rate")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--embeddings")
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--no-renormalize", dest="renormalize_after_pool", action="store_const", const=False)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print the error rate of a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--max-nodes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny network")
    p.add_argument("--arch", required=True, choices=ARCHS)
    p.add_argument("--widths", type=int_list)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--no-gate", action="store_true", help="replace the gPool gate by identity scaling")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="count parameters per layer group")
    p.add_argument("--arch", required=True, choices=ARCHS)
    p.add_argument("--channels", type=int_list)
    p.add_argument("--input-dim", type=int, required=True)
    p.add_argument("--n-classes", type=int, default=4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"gpoolnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("gpoolnet: interrupted", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001 - map any runtime failure to exit 1
        logger.debug("failure", exc_info=True)
        print(f"gpoolnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
