"""Shared fixtures, including the seed-fixed synthetic end-to-end experiment."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from simemb import cooc, data, eval as ev, model, synth, train


@dataclass
class SynthExperiment:
    corpus: data.SequenceCorpus
    split: data.DatasetSplit
    matrix: cooc.CoocMatrix
    item_groups: np.ndarray              # group id per real item index (1-based offset)
    params: dict                         # mode -> ModelParams
    logs: dict                           # mode -> TrainLog
    atlases: dict                        # mode -> ItemAtlas
    reports: dict                        # mode -> EvalReport (test split)
    wall_seconds: float


@pytest.fixture(scope="session")
def synth_experiment() -> SynthExperiment:
    """Train both embedding modes on the planted-cluster benchmark.

    2,000 users / 300 items / 10 groups, fixed seed; both modes get the same
    budget well under the 20k-iteration cap.
    """
    t0 = time.perf_counter()
    dataset = synth.generate(n_users=2000, n_items=300, n_groups=10,
                             seq_len=20, noise=0.05, seed=7)
    records, _ = data.ingest("\n".join(dataset.lines).encode(), fmt="seq-lines")
    corpus = data.build_sequences(records)
    split = data.split_users(corpus.sequences, seed=7)
    matrix = cooc.build([corpus.sequences[u].items for u in split.train],
                        corpus.n_items, 3)

    groups = np.zeros(corpus.n_items, dtype=np.int64)
    for key, idx in corpus.idmap.item_to_index.items():
        groups[idx - 1] = int(dataset.labels[key][1:])

    params, logs, atlases, reports = {}, {}, {}, {}
    for mode in (model.MODE_SIMEMB, model.MODE_BASELINE):
        config = train.TrainConfig(
            d=32, K=4, L=20, lr=0.001, batch=128, neg_multiplier=10,
            max_iters=3000, eval_every=250, patience=8, seed=7, T=3, mode=mode,
        )
        trained, log = train.train(config, split, corpus,
                                   matrix if mode == model.MODE_SIMEMB else None)
        atlas = model.item_atlas(trained, matrix if mode == model.MODE_SIMEMB else None)
        report = ev.evaluate(trained, atlas, corpus.sequences, split.test,
                             cutoffs=(20, 50), max_len=20)
        params[mode], logs[mode], atlases[mode], reports[mode] = trained, log, atlas, report

    return SynthExperiment(
        corpus=corpus, split=split, matrix=matrix, item_groups=groups,
        params=params, logs=logs, atlases=atlases, reports=reports,
        wall_seconds=time.perf_counter() - t0,
    )
