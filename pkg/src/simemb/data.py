"""Interaction-log ingestion, 5-core filtering, user splits, and training examples.

Two input formats are supported:
  * csv: header ``user_id,item_id,timestamp``, comma-separated, UTF-8.
  * seq-lines: one user per line, whitespace-separated tokens; first token is
    the user key, the rest are items in chronological order (positions stand
    in for timestamps).

Item index 0 is reserved as the padding sentinel; real items occupy [1, n_items].
Users are plain 0-based dense indices.
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_ITEM = 0


@dataclass(frozen=True)
class InteractionRecord:
    user_key: str
    item_key: str
    timestamp: int


@dataclass
class IdMap:
    """Bijection between opaque keys and dense indices (items 1-based, 0 = padding)."""

    item_to_index: dict = field(default_factory=dict)
    index_to_item: list = field(default_factory=lambda: [None])
    user_to_index: dict = field(default_factory=dict)
    index_to_user: list = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return len(self.index_to_item) - 1

    @property
    def n_users(self) -> int:
        return len(self.index_to_user)

    def add_item(self, key: str) -> int:
        idx = self.item_to_index.get(key)
        if idx is None:
            idx = len(self.index_to_item)
            self.item_to_index[key] = idx
            self.index_to_item.append(key)
        return idx

    def add_user(self, key: str) -> int:
        idx = self.user_to_index.get(key)
        if idx is None:
            idx = len(self.index_to_user)
            self.user_to_index[key] = idx
            self.index_to_user.append(key)
        return idx


@dataclass
class UserSequence:
    """Chronologically ordered dense item indices for one user."""

    user: int
    items: list

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SequenceCorpus:
    """Filtered per-user sequences with their compact id map."""

    sequences: dict            # user index -> UserSequence
    idmap: IdMap
    max_len_eval: int = 20

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_items(self) -> int:
        return self.idmap.n_items

    @property
    def n_interactions(self) -> int:
        return sum(len(s) for s in self.sequences.values())


@dataclass
class DatasetSplit:
    """Disjoint train/valid/test user-index lists from an 8:1:1 shuffle."""

    train: list
    valid: list
    test: list
    seed: int = 0


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8"), True
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), True
    return source, False


def ingest(source, fmt: str = "csv") -> tuple[list, IdMap]:
    """Parse an interaction log into records (input order) and a full-universe IdMap."""
    if fmt not in ("csv", "seq-lines"):
        raise ValueError(f"unknown input format: {fmt!r}")
    stream, owned = _open_text(source)
    try:
        records: list[InteractionRecord] = []
        idmap = IdMap()
        if fmt == "csv":
            reader = csv.reader(stream)
            header = next(reader, None)
            if header is None:
                raise ValueError("empty input")
            if [h.strip() for h in header] != ["user_id", "item_id", "timestamp"]:
                raise ValueError(f"line 1: expected header 'user_id,item_id,timestamp', got {','.join(header)!r}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
                user_key, item_key, ts = (f.strip() for f in row)
                if not user_key or not item_key:
                    raise ValueError(f"line {lineno}: empty user or item key")
                try:
                    timestamp = int(ts)
                except ValueError:
                    raise ValueError(f"line {lineno}: bad timestamp {ts!r}") from None
                records.append(InteractionRecord(user_key, item_key, timestamp))
                idmap.add_user(user_key)
                idmap.add_item(item_key)
        else:
            for lineno, line in enumerate(stream, start=1):
                tokens = line.split()
                if not tokens:
                    continue
                if len(tokens) < 2:
                    raise ValueError(f"line {lineno}: user {tokens[0]!r} has no items")
                user_key = tokens[0]
                idmap.add_user(user_key)
                for pos, item_key in enumerate(tokens[1:]):
                    records.append(InteractionRecord(user_key, item_key, pos))
                    idmap.add_item(item_key)
        if not records:
            raise ValueError("empty input")
        return records, idmap
    finally:
        if owned:
            stream.close()


def build_sequences(records, min_count: int = 5, max_len_eval: int = 20) -> SequenceCorpus:
    """Iterate the occurrence filter to a fixpoint, then build chronological sequences.

    A record survives a round only if both its user and its item currently have
    at least `min_count` occurrences; removals re-trigger the count, so the
    result is a true k-core. Surviving keys are re-mapped to a compact IdMap so
    n_items matches the filtered corpus.
    """
    live = list(records)
    while True:
        user_counts = Counter(r.user_key for r in live)
        item_counts = Counter(r.item_key for r in live)
        kept = [r for r in live if user_counts[r.user_key] >= min_count and item_counts[r.item_key] >= min_count]
        if len(kept) == len(live):
            break
        live = kept
    if not live:
        raise ValueError(f"no users survive the {min_count}-occurrence filter")

    idmap = IdMap()
    by_user: dict[int, list] = defaultdict(list)
    for order, rec in enumerate(live):
        u = idmap.add_user(rec.user_key)
        i = idmap.add_item(rec.item_key)
        by_user[u].append((rec.timestamp, order, i))
    sequences = {}
    for u, triples in by_user.items():
        triples.sort(key=lambda t: (t[0], t[1]))  # timestamp order, input order on ties
        sequences[u] = UserSequence(user=u, items=[i for _, _, i in triples])
    return SequenceCorpus(sequences=sequences, idmap=idmap, max_len_eval=max_len_eval)


def split_users(sequences: dict, seed: int) -> DatasetSplit:
    """Deterministic shuffled 8:1:1 partition of the user set."""
    users = sorted(sequences.keys())
    if len(users) < 10:
        raise ValueError(f"need at least 10 users to split, got {len(users)}")
    perm = np.random.default_rng(seed).permutation(np.asarray(users, dtype=np.int64))
    n = len(users)
    n_valid = int(round(n * 0.1))
    n_test = int(round(n * 0.1))
    n_train = n - n_valid - n_test
    return DatasetSplit(
        train=[int(u) for u in perm[:n_train]],
        valid=[int(u) for u in perm[n_train:n_train + n_valid]],
        test=[int(u) for u in perm[n_train + n_valid:]],
        seed=seed,
    )


def eval_split(seq: UserSequence, fraction: float = 0.8, max_len: int = 20) -> tuple[list, set]:
    """First floor(fraction*len) items (window-truncated) vs the remaining targets."""
    cut = int(np.floor(fraction * len(seq.items)))
    history = seq.items[:cut][-max_len:]
    targets = set(seq.items[cut:])
    return history, targets


def train_examples(seq: UserSequence, rng: np.random.Generator, max_len: int = 20):
    """One (history, mask, target) training example with a uniform target position.

    History is the up-to-`max_len` items immediately preceding the target,
    left-padded with the sentinel; the mask marks real positions.
    """
    n = len(seq.items)
    if n < 2:
        raise ValueError("sequence too short to form a training example")
    t = int(rng.integers(1, n))
    window = seq.items[max(0, t - max_len):t]
    history = np.zeros(max_len, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.float32)
    history[max_len - len(window):] = window
    mask[max_len - len(window):] = 1.0
    return history, mask, seq.items[t]


# ---------------------------------------------------------------------------
# corpus / split file formats (JSON)
# ---------------------------------------------------------------------------

def save_corpus(path, corpus: SequenceCorpus) -> None:
    payload = {
        "format": "simemb-corpus",
        "version": 1,
        "max_len_eval": corpus.max_len_eval,
        "item_keys": corpus.idmap.index_to_item[1:],
        "user_keys": corpus.idmap.index_to_user,
        "sequences": {str(u): s.items for u, s in sorted(corpus.sequences.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_corpus(path) -> SequenceCorpus:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "simemb-corpus" or payload.get("version") != 1:
        raise ValueError(f"{path}: expected a simemb-corpus version 1 file")
    idmap = IdMap()
    for key in payload["user_keys"]:
        idmap.add_user(key)
    for key in payload["item_keys"]:
        idmap.add_item(key)
    sequences = {
        int(u): UserSequence(user=int(u), items=list(items))
        for u, items in payload["sequences"].items()
    }
    return SequenceCorpus(sequences=sequences, idmap=idmap, max_len_eval=payload["max_len_eval"])


def save_split(path, split: DatasetSplit) -> None:
    payload = {
        "format": "simemb-split",
        "version": 1,
        "seed": split.seed,
        "train": split.train,
        "valid": split.valid,
        "test": split.test,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_split(path) -> DatasetSplit:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "simemb-split" or payload.get("version") != 1:
        raise ValueError(f"{path}: expected a simemb-split version 1 file")
    return DatasetSplit(
        train=payload["train"], valid=payload["valid"], test=payload["test"], seed=payload["seed"]
    )
