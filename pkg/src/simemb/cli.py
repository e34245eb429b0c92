"""Command-line pipeline: synth, prepare, cooc, train, eval, visualize, theory-check, bench.

Every command writes its artifact plus a run manifest (config snapshot, input
fingerprints, seeds, artifact paths, and per-phase wall clock) so runs are
reproducible from their declared inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import cooc as cooc_mod
from . import data as data_mod
from . import eval as eval_mod
from . import model as model_mod
from . import synth as synth_mod
from . import theory as theory_mod
from . import train as train_mod
from . import viz as viz_mod


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_path, command: str, config: dict, inputs: dict, seeds: dict,
                   artifacts: dict, timings: dict) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "seeds": seeds,
        "artifacts": {name: str(p) for name, p in artifacts.items()},
        "timings": timings,
    }
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _train_sequences(corpus: data_mod.SequenceCorpus, split: data_mod.DatasetSplit):
    return [corpus.sequences[u].items for u in split.train]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    dataset = synth_mod.generate(
        n_users=args.users, n_items=args.items, n_groups=args.groups,
        seq_len=args.seq_len, noise=args.noise, seed=args.seed,
    )
    interactions = out / "interactions.txt"
    labels = out / "labels.csv"
    synth_mod.write_dataset(dataset, interactions, labels)
    write_manifest(
        out / "manifest-synth.json", "synth",
        config={"users": args.users, "items": args.items, "groups": args.groups,
                "seq_len": args.seq_len, "noise": args.noise},
        inputs={}, seeds={"seed": args.seed},
        artifacts={"interactions": interactions, "labels": labels},
        timings={"generate_s": time.perf_counter() - t0},
    )
    print(f"synth: wrote {interactions} ({dataset.n_users} users, {dataset.n_items} items)")
    return 0


def cmd_prepare(args) -> int:
    src = Path(args.input)
    if not src.exists():
        print(f"prepare: input not found: {src}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records, _ = data_mod.ingest(src, fmt=args.format)
    corpus = data_mod.build_sequences(records, min_count=args.min_count, max_len_eval=args.max_len)
    split = data_mod.split_users(corpus.sequences, seed=args.seed)
    corpus_path = out / "corpus.json"
    split_path = out / "split.json"
    data_mod.save_corpus(corpus_path, corpus)
    data_mod.save_split(split_path, split)
    write_manifest(
        out / "manifest-prepare.json", "prepare",
        config={"format": args.format, "min_count": args.min_count, "max_len": args.max_len},
        inputs={"interactions": src}, seeds={"seed": args.seed},
        artifacts={"corpus": corpus_path, "split": split_path},
        timings={"prepare_s": time.perf_counter() - t0},
    )
    print(f"prepare: users={corpus.n_users} items={corpus.n_items} interactions={corpus.n_interactions}")
    return 0


def cmd_cooc(args) -> int:
    corpus = data_mod.load_corpus(args.corpus)
    split = data_mod.load_split(args.split)
    t0 = time.perf_counter()
    matrix = cooc_mod.build(_train_sequences(corpus, split), corpus.n_items, args.T)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cooc_mod.save_cooc(out, matrix)
    write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "cooc",
        config={"T": args.T},
        inputs={"corpus": args.corpus, "split": args.split}, seeds={},
        artifacts={"cooc": out},
        timings={"build_s": time.perf_counter() - t0},
    )
    print(f"cooc: wrote {out} (T={args.T}, density={matrix.density:.6f}, nnz={matrix.matrix.nnz})")
    return 0


def _config_from_args(args) -> train_mod.TrainConfig:
    values = train_mod.parse_config_file(args.config) if args.config else {}
    for f in fields(train_mod.TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return train_mod.TrainConfig(**values)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags override file values")
    parser.add_argument("--d", type=int, help="embedding dimension")
    parser.add_argument("--K", type=int, help="number of interests")
    parser.add_argument("--L", type=int, help="history window length")
    parser.add_argument("--lr", type=float, help="Adam learning rate")
    parser.add_argument("--batch", type=int, help="batch size")
    parser.add_argument("--neg-multiplier", dest="neg_multiplier", type=int,
                        help="negatives = multiplier * batch")
    parser.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap")
    parser.add_argument("--eval-every", dest="eval_every", type=int, help="validation period")
    parser.add_argument("--patience", type=int, help="evaluations without improvement before stop")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--T", type=int, help="co-occurrence step-interval threshold")
    parser.add_argument("--mode", choices=[model_mod.MODE_SIMEMB, model_mod.MODE_BASELINE])
    parser.add_argument("--positional", type=lambda v: v.lower() in ("true", "1", "yes"),
                        help="true/false: add positional embeddings before attention scoring")


def cmd_train(args) -> int:
    config = _config_from_args(args)
    corpus = data_mod.load_corpus(args.corpus)
    split = data_mod.load_split(args.split)
    matrix = None
    if config.mode == model_mod.MODE_SIMEMB or args.cooc:
        if not args.cooc:
            print("train: simemb mode requires --cooc", file=sys.stderr)
            return 1
        matrix = cooc_mod.load_cooc(args.cooc)
        if matrix.threshold != config.T:
            print(f"train: config T={config.T} but co-occurrence file was built with "
                  f"T={matrix.threshold}; pass a matching --T", file=sys.stderr)
            return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    params, log = train_mod.train(config, split, corpus, matrix)
    train_s = time.perf_counter() - t0

    ckpt_path = out / "checkpoint.bin"
    model_mod.save_checkpoint(ckpt_path, params,
                              cooc_path=str(args.cooc) if matrix is not None else "")
    log_path = out / "trainlog.json"
    with open(log_path, "w", encoding="utf-8") as fh:
        json.dump({
            "losses": log.losses,
            "mean_batch_seconds": log.mean_batch_seconds(),
            "best_iteration": log.best_iteration,
            "stopped_early": log.stopped_early,
            "evals": [{"iteration": e.iteration, "loss_ema": e.loss_ema,
                       "valid_recall50": e.valid_recall50,
                       "secs_per_batch": e.secs_per_batch} for e in log.evals],
        }, fh)

    inputs = {"corpus": args.corpus, "split": args.split}
    if matrix is not None:
        inputs["cooc"] = args.cooc
    write_manifest(
        out / "manifest-train.json", "train",
        config=config.to_dict(), inputs=inputs, seeds={"seed": config.seed},
        artifacts={"checkpoint": ckpt_path, "trainlog": log_path},
        timings={"train_s": train_s, "mean_batch_s": log.mean_batch_seconds()},
    )
    best = log.evals[-1].valid_recall50 if log.evals else float("nan")
    print(f"train: wrote {ckpt_path} ({len(log.losses)} iterations, "
          f"last valid recall@50={best:.4f}, {log.mean_batch_seconds()*1000:.1f} ms/batch)")
    return 0


def _load_model(args):
    params, stored_cooc = model_mod.load_checkpoint(args.checkpoint)
    matrix = None
    if params.mode == model_mod.MODE_SIMEMB:
        cooc_path = args.cooc or stored_cooc
        if not cooc_path:
            raise ValueError("checkpoint is simemb mode but no co-occurrence path is available")
        matrix = cooc_mod.load_cooc(cooc_path)
    return params, matrix


def cmd_eval(args) -> int:
    corpus = data_mod.load_corpus(args.corpus)
    split = data_mod.load_split(args.split)
    params, matrix = _load_model(args)
    users = getattr(split, args.which)
    t0 = time.perf_counter()
    atlas = model_mod.item_atlas(params, matrix)
    report = eval_mod.evaluate(params, atlas, corpus.sequences, users,
                               cutoffs=(20, 50), max_len=params.seq_len)
    payload = json.dumps(report.flat_dict())
    print(payload)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"report-{args.which}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(payload + "\n")
    write_manifest(
        out.with_suffix(".manifest.json"), "eval",
        config={"which": args.which},
        inputs={"checkpoint": args.checkpoint, "corpus": args.corpus, "split": args.split},
        seeds={}, artifacts={"report": out},
        timings={"eval_s": time.perf_counter() - t0},
    )
    return 0


def cmd_visualize(args) -> int:
    corpus = data_mod.load_corpus(args.corpus)
    params, matrix = _load_model(args)
    labels = {}
    with open(args.labels, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "," not in line:
                raise ValueError(f"{args.labels}:{lineno}: expected item_key,category")
            key, category = line.split(",", 1)
            labels[key.strip()] = category.strip()

    labeled = [(idx, labels[key]) for key, idx in corpus.idmap.item_to_index.items() if key in labels]
    if len(labeled) < 10:
        print(f"visualize: only {len(labeled)} labeled items present in the corpus", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    if len(labeled) > args.sample:
        picked = rng.choice(len(labeled), size=args.sample, replace=False)
        labeled = [labeled[i] for i in sorted(picked)]

    t0 = time.perf_counter()
    atlas = model_mod.item_atlas(params, matrix)
    indices = np.asarray([idx for idx, _ in labeled])
    result = viz_mod.tsne_project(atlas.matrix[indices], perplexity=args.perplexity,
                                  iters=args.iters, seed=args.seed)
    circle = viz_mod.normalize_to_circle(result.points)
    projections = [
        viz_mod.Projection2D(item=int(idx), category=cat, x=float(x), y=float(y))
        for (idx, cat), (x, y) in zip(labeled, circle)
    ]
    curve = viz_mod.vmf_density(viz_mod.angles_of(circle), kappa=args.kappa)
    field = viz_mod.gaussian_kde2d(circle)
    out = Path(args.out)
    written = viz_mod.export(projections, {"all": curve}, out, field=field, svg=args.svg)
    write_manifest(
        out / "manifest-visualize.json", "visualize",
        config={"sample": args.sample, "perplexity": args.perplexity, "iters": args.iters,
                "kappa": args.kappa},
        inputs={"checkpoint": args.checkpoint, "labels": args.labels, "corpus": args.corpus},
        seeds={"seed": args.seed},
        artifacts={p.name: p for p in written},
        timings={"visualize_s": time.perf_counter() - t0},
    )
    print(f"visualize: wrote {len(written)} files to {out} "
          f"(sharpness={viz_mod.sharpness(curve):.2f}, kl_final={result.kl_trace[-1][1]:.4f})")
    return 0


def cmd_theory_check(args) -> int:
    result = theory_mod.run_checks(args.items, args.attrs, args.seed, trials=args.trials)
    status = "pass" if result["passed"] else "FAIL"
    print(f"theory-check: {status} over {result['trials']} instances "
          f"(product exact: {result['product_exact']}, "
          f"max recovery residual: {result['max_recovery_residual']:.3e})")
    return 0 if result["passed"] else 1


def cmd_bench(args) -> int:
    corpus = data_mod.load_corpus(args.corpus)
    split = data_mod.load_split(args.split)
    matrix = cooc_mod.load_cooc(args.cooc)
    base = _config_from_args(args)

    results = {}
    for mode in (model_mod.MODE_BASELINE, model_mod.MODE_SIMEMB):
        cfg = train_mod.TrainConfig(**{**base.to_dict(), "mode": mode, "T": matrix.threshold})
        results[mode] = train_mod.benchmark(cfg, split, corpus, matrix, n_batches=args.batches)
    ratio = results[model_mod.MODE_SIMEMB] / results[model_mod.MODE_BASELINE]
    print(f"bench: baseline {results[model_mod.MODE_BASELINE]*1000:.2f} ms/batch, "
          f"simemb {results[model_mod.MODE_SIMEMB]*1000:.2f} ms/batch, ratio {ratio:.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"baseline_s": results[model_mod.MODE_BASELINE],
                       "simemb_s": results[model_mod.MODE_SIMEMB], "ratio": ratio}, fh)
        write_manifest(
            Path(args.out).with_suffix(".manifest.json"), "bench",
            config={**base.to_dict(), "batches": args.batches},
            inputs={"corpus": args.corpus, "split": args.split, "cooc": args.cooc},
            seeds={"seed": base.seed}, artifacts={"timings": args.out},
            timings={"baseline_s": results[model_mod.MODE_BASELINE],
                     "simemb_s": results[model_mod.MODE_SIMEMB]},
        )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simemb",
                                     description="co-occurrence-enhanced multi-interest retrieval")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-cluster dataset")
    p.add_argument("--users", type=int, default=2000)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--groups", type=int, default=10)
    p.add_argument("--seq-len", dest="seq_len", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="ingest, filter, and split an interaction log")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["csv", "seq-lines"], default="csv")
    p.add_argument("--min-count", dest="min_count", type=int, default=5)
    p.add_argument("--max-len", dest="max_len", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("cooc", help="build the co-occurrence matrix from the training split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--T", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cooc)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--cooc", help="co-occurrence file (required for simemb mode)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--cooc", help="override the checkpoint's co-occurrence path")
    p.add_argument("--which", choices=["valid", "test"], default="test")
    p.add_argument("--out", help="report path (default: report-<which>.json beside the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", help="embedding-space projection and density export")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True, help="lines of item_key,category")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cooc", help="override the checkpoint's co-occurrence path")
    p.add_argument("--sample", type=int, default=600)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--kappa", type=float, default=25.0)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("theory-check", help="similarity/recovery identity checks")
    p.add_argument("--items", type=int, default=32)
    p.add_argument("--attrs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("bench", help="per-batch training time, baseline vs simemb")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--cooc", required=True)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, FloatingPointError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
