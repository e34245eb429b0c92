"""Planted-cluster synthetic interaction generator.

Items belong to 1-3 latent groups (the first is their category label); each
user samples two groups and draws a fixed-length sequence from their pooled
items, with a small uniform-noise rate. The resulting corpus has ground-truth
clusters, so embedding-quality claims can be checked directionally without a
real dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SynthDataset:
    lines: list          # seq-lines rows: "user item item ..."
    labels: dict         # item_key -> category name
    n_users: int
    n_items: int
    n_groups: int


def generate(n_users: int = 2000, n_items: int = 300, n_groups: int = 10,
             seq_len: int = 20, noise: float = 0.05, seed: int = 0) -> SynthDataset:
    if n_groups < 2 or n_items < n_groups:
        raise ValueError("need at least 2 groups and n_items >= n_groups")
    if not (0.0 <= noise < 1.0):
        raise ValueError("noise must be in [0, 1)")
    rng = np.random.default_rng(seed)

    item_keys = [f"i{idx:05d}" for idx in range(n_items)]
    primary = np.arange(n_items) % n_groups
    group_pool: list[list[int]] = [[] for _ in range(n_groups)]
    labels = {}
    for idx in range(n_items):
        groups = {int(primary[idx])}
        extra = int(rng.choice([0, 1, 2], p=[0.6, 0.3, 0.1]))
        while len(groups) < 1 + extra:
            groups.add(int(rng.integers(0, n_groups)))
        for g in groups:
            group_pool[g].append(idx)
        labels[item_keys[idx]] = f"g{primary[idx]:02d}"

    lines = []
    for u in range(n_users):
        chosen = rng.choice(n_groups, size=2, replace=False)
        pool = np.asarray(sorted(set(group_pool[chosen[0]]) | set(group_pool[chosen[1]])))
        picks = pool[rng.integers(0, len(pool), size=seq_len)]
        noisy = rng.random(seq_len) < noise
        picks[noisy] = rng.integers(0, n_items, size=int(noisy.sum()))
        tokens = [f"u{u:05d}"] + [item_keys[i] for i in picks]
        lines.append(" ".join(tokens))

    return SynthDataset(lines=lines, labels=labels, n_users=n_users,
                        n_items=n_items, n_groups=n_groups)


def write_dataset(dataset: SynthDataset, interactions_path, labels_path) -> None:
    with open(interactions_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(dataset.lines) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for key in sorted(dataset.labels):
            fh.write(f"{key},{dataset.labels[key]}\n")


def group_cosine_margin(atlas_rows: np.ndarray, groups: np.ndarray) -> float:
    """Mean intra-group minus mean inter-group cosine similarity of embedding rows."""
    x = np.asarray(atlas_rows, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    unit = x / norms
    cos = unit @ unit.T
    same = groups[:, None] == groups[None, :]
    off_diag = ~np.eye(len(x), dtype=bool)
    intra = cos[same & off_diag]
    inter = cos[~same]
    return float(intra.mean() - inter.mean())
