"""Serving-phase retrieval with exact inner-product search, plus Recall/HitRate/NDCG.

Each user's interests retrieve their exact top-N candidates; the union is
rescored by the max dot product over interests and re-cut to N. Because the
per-interest cut uses the same (score desc, index asc) order as the final cut,
this equals brute-force scoring of the whole corpus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from . import model as model_mod
from .numeric import Tensor


@dataclass
class EvalReport:
    """Mean Recall/HitRate/NDCG per cutoff over users with nonempty targets."""

    metrics: dict        # cutoff -> {"recall": .., "ndcg": .., "hit": ..}
    n_users_evaluated: int
    n_users_skipped: int

    def flat_dict(self) -> dict:
        out = {}
        for n in sorted(self.metrics):
            for key in ("recall", "ndcg", "hit"):
                out[f"{key}@{n}"] = self.metrics[n][key]
        out["users"] = self.n_users_evaluated
        out["skipped"] = self.n_users_skipped
        return out


def _top_indices(scores: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest scores, ties broken by lower id."""
    order = np.lexsort((ids, -scores))
    return order[:n]


def retrieve_topn(interest_vectors: np.ndarray, atlas: model_mod.ItemAtlas, n: int) -> np.ndarray:
    """Top-n item indices by max-over-interests dot product; padding row excluded."""
    v = np.asarray(interest_vectors, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    n_items = atlas.n_items
    if n > n_items:
        raise ValueError(f"cannot retrieve {n} items from a corpus of {n_items}")
    real = atlas.matrix[1:].astype(np.float64, copy=False)
    scores = real @ v.T                      # (n_items, K)
    ids = np.arange(1, n_items + 1)

    candidates: list[np.ndarray] = []
    for k in range(scores.shape[1]):
        candidates.append(_top_indices(scores[:, k], ids, n))
    cand = np.unique(np.concatenate(candidates))
    final = scores[cand].max(axis=1)
    picked = _top_indices(final, ids[cand], n)
    return ids[cand][picked]


def metrics(ranked, targets: set, n: int) -> tuple[float, float, float]:
    """(recall, hit, ndcg) of the first n ranked items against the target set."""
    if not targets:
        raise ValueError("metrics: empty target set (caller must skip this user)")
    top = list(ranked[:n])
    hits = [r for r, item in enumerate(top) if item in targets]
    recall = len(set(top) & targets) / len(targets)
    hit = 1.0 if hits else 0.0
    dcg = sum(1.0 / np.log2(r + 2) for r in hits)
    ideal = sum(1.0 / np.log2(r + 2) for r in range(min(len(targets), n)))
    return recall, hit, dcg / ideal


def user_interests(params: model_mod.ModelParams, atlas: model_mod.ItemAtlas,
                   histories: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Forward-only interest extraction from atlas-embedded histories."""
    h = Tensor(atlas.matrix[histories])
    interests = model_mod.extract_interests(h, masks, params.w1.detach(), params.w2.detach(),
                                            None if params.pos is None else params.pos.detach())
    return interests.vectors.data


def evaluate(params: model_mod.ModelParams, atlas: model_mod.ItemAtlas, sequences: dict,
             users, cutoffs=(20, 50), max_len: int = 20, fraction: float = 0.8) -> EvalReport:
    """Retrieval metrics over a user split with the 80/20 history/target protocol."""
    cutoffs = tuple(sorted(cutoffs))
    max_n = cutoffs[-1]
    sums = {n: np.zeros(3) for n in cutoffs}
    evaluated = 0
    skipped = 0

    pending: list[tuple[np.ndarray, np.ndarray, set]] = []
    for u in users:
        history, targets = data_mod.eval_split(sequences[u], fraction=fraction, max_len=max_len)
        if not targets:
            skipped += 1
            continue
        padded = np.zeros(max_len, dtype=np.int64)
        mask = np.zeros(max_len, dtype=np.float32)
        padded[max_len - len(history):] = history
        mask[max_len - len(history):] = 1.0
        pending.append((padded, mask, targets))

    chunk = 512
    for start in range(0, len(pending), chunk):
        block = pending[start:start + chunk]
        histories = np.stack([b[0] for b in block])
        masks = np.stack([b[1] for b in block])
        vectors = user_interests(params, atlas, histories, masks)
        for row, (_, _, targets) in enumerate(block):
            ranked = retrieve_topn(vectors[row], atlas, max_n)
            for n in cutoffs:
                sums[n] += metrics(ranked, targets, n)
            evaluated += 1

    out = {}
    for n in cutoffs:
        mean = sums[n] / evaluated if evaluated else np.zeros(3)
        out[n] = {"recall": float(mean[0]), "hit": float(mean[1]), "ndcg": float(mean[2])}
    return EvalReport(metrics=out, n_users_evaluated=evaluated, n_users_skipped=skipped)
