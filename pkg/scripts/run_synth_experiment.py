#!/usr/bin/env python3
"""Planted-cluster benchmark: train both embedding modes and compare them.

Generates the synthetic corpus, builds the co-occurrence matrix from the
training split, trains the enhanced and the ID-embedding model with the same
budget, then reports retrieval metrics, per-batch timing, embedding-space
cluster margins, and angular density sharpness.
"""

import argparse
import time

import numpy as np

from simemb import cooc, data, eval as ev, model, synth, train, viz


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=2000)
    parser.add_argument("--items", type=int, default=300)
    parser.add_argument("--groups", type=int, default=10)
    parser.add_argument("--noise", type=float, default=0.05)
    parser.add_argument("--d", type=int, default=32)
    parser.add_argument("--interests", type=int, default=4)
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--iters", type=int, default=3000)
    parser.add_argument("--T", type=int, default=3)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--skip-tsne", action="store_true",
                        help="skip the projection/density comparison")
    args = parser.parse_args()

    print(f"generating corpus: {args.users} users, {args.items} items, {args.groups} groups")
    dataset = synth.generate(n_users=args.users, n_items=args.items, n_groups=args.groups,
                             seq_len=20, noise=args.noise, seed=args.seed)
    records, _ = data.ingest("\n".join(dataset.lines).encode(), fmt="seq-lines")
    corpus = data.build_sequences(records)
    split = data.split_users(corpus.sequences, seed=args.seed)
    matrix = cooc.build([corpus.sequences[u].items for u in split.train],
                        corpus.n_items, args.T)
    print(f"co-occurrence: density={matrix.density:.4f}, nnz={matrix.matrix.nnz}")

    groups = np.zeros(corpus.n_items, dtype=np.int64)
    for key, idx in corpus.idmap.item_to_index.items():
        groups[idx - 1] = int(dataset.labels[key][1:])

    results = {}
    for mode in (model.MODE_SIMEMB, model.MODE_BASELINE):
        config = train.TrainConfig(d=args.d, K=args.interests, L=20, lr=0.001,
                                   batch=args.batch, neg_multiplier=10,
                                   max_iters=args.iters, eval_every=250, patience=8,
                                   seed=args.seed, T=args.T, mode=mode)
        t0 = time.perf_counter()
        trained, log = train.train(config, split, corpus,
                                   matrix if mode == model.MODE_SIMEMB else None)
        wall = time.perf_counter() - t0
        atlas = model.item_atlas(trained, matrix if mode == model.MODE_SIMEMB else None)
        report = ev.evaluate(trained, atlas, corpus.sequences, split.test,
                             cutoffs=(20, 50), max_len=20)
        margin = synth.group_cosine_margin(atlas.matrix[1:], groups)
        results[mode] = dict(report=report, log=log, atlas=atlas, margin=margin, wall=wall)
        print(f"{mode}: {len(log.losses)} iters in {wall:.0f}s "
              f"({log.mean_batch_seconds() * 1000:.1f} ms/batch)")

    print("\nmode        recall@20  ndcg@20  hit@20  recall@50  ndcg@50  hit@50  margin")
    for mode, r in results.items():
        m = r["report"].flat_dict()
        print(f"{mode:<10}  {m['recall@20']:.4f}     {m['ndcg@20']:.4f}   {m['hit@20']:.4f}  "
              f"{m['recall@50']:.4f}     {m['ndcg@50']:.4f}   {m['hit@50']:.4f}  "
              f"{r['margin']:.4f}")

    base = results[model.MODE_BASELINE]
    enh = results[model.MODE_SIMEMB]
    recall_gain = enh["report"].metrics[20]["recall"] / base["report"].metrics[20]["recall"] - 1
    time_ratio = enh["log"].mean_batch_seconds() / base["log"].mean_batch_seconds()
    print(f"\nrecall@20 gain: {recall_gain * 100:+.1f}%   per-batch time ratio: {time_ratio:.2f}")

    if not args.skip_tsne:
        for mode, r in results.items():
            projected = viz.tsne_project(r["atlas"].matrix[1:], perplexity=30.0,
                                         iters=1000, seed=args.seed)
            circle = viz.normalize_to_circle(projected.points)
            curve = viz.vmf_density(viz.angles_of(circle), kappa=25.0)
            print(f"{mode}: angular density sharpness = {viz.sharpness(curve):.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
