"""Sampled-softmax training loop with shared in-batch negatives and early stopping.

Negatives are drawn uniformly from the real-item range with replacement and
shared across the batch; positives are not excluded. The loss is the mean
negative log softmax of the positive logit against the shared negative logits.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import data as data_mod
from . import eval as eval_mod
from . import model as model_mod
from . import numeric as nm


@dataclass
class TrainConfig:
    """Hyperparameters; field names double as the config-file keys."""

    d: int = 64
    K: int = 4
    L: int = 20
    lr: float = 0.001
    batch: int = 256
    neg_multiplier: int = 10
    max_iters: int = 1_000_000
    eval_every: int = 500
    patience: int = 20
    seed: int = 0
    T: int = 3
    mode: str = model_mod.MODE_SIMEMB
    positional: bool = True

    def __post_init__(self):
        for name in ("d", "K", "L", "lr", "batch", "neg_multiplier", "max_iters", "eval_every", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.mode not in (model_mod.MODE_SIMEMB, model_mod.MODE_BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def n_negatives(self) -> int:
        return self.neg_multiplier * self.batch

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def parse_config_file(path) -> dict:
    """Flat key=value text; returns typed values for TrainConfig fields."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if key == "mode":
        return value
    if key == "positional":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key positional: expected a boolean, got {value!r}")
    if key == "lr":
        return float(value)
    return int(value)


@dataclass
class EvalPoint:
    iteration: int
    loss_ema: float
    valid_recall50: float
    secs_per_batch: float


@dataclass
class TrainLog:
    """Per-iteration losses/timings and per-evaluation validation points."""

    losses: list = field(default_factory=list)
    batch_seconds: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    best_iteration: int = 0
    stopped_early: bool = False

    def mean_batch_seconds(self) -> float:
        # first batch pays one-time cache warmup; skip it when there is more data
        timings = self.batch_seconds[1:] if len(self.batch_seconds) > 1 else self.batch_seconds
        return float(np.mean(timings)) if timings else 0.0


def sample_negatives(n_items: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform with replacement over real items [1, n_items], shared by the batch."""
    if n_items < 2:
        raise ValueError("need at least 2 items to sample negatives")
    return rng.integers(1, n_items + 1, size=count, dtype=np.int64)


def assemble_batch(sequences, users, rng: np.random.Generator, max_len: int):
    histories = np.zeros((len(users), max_len), dtype=np.int64)
    masks = np.zeros((len(users), max_len), dtype=np.float32)
    targets = np.zeros(len(users), dtype=np.int64)
    for row, u in enumerate(users):
        histories[row], masks[row], targets[row] = data_mod.train_examples(sequences[u], rng, max_len)
    return histories, masks, targets


def _embed_for_batch(params: model_mod.ModelParams, cooc, histories, targets, negatives,
                     prefer_full: bool | None = None):
    """Embed all indices a batch touches, picking the cheaper but equivalent route.

    Row-gather route: each index pulls its co-occurrence row and one short-wide
    sparse product embeds them; cost scales with rows-looked-up times row
    density, the right choice for large corpora. Full-table route: one sparse
    product materializes the whole enhanced table on the tape and indices
    become plain lookups; cheaper whenever the corpus is smaller than the
    number of looked-up rows, as on small benchmarks.
    """
    if params.mode != model_mod.MODE_SIMEMB:
        h = nm.gather(params.emb, histories)
        e_pos = nm.gather(params.emb, targets)
        e_neg = nm.gather(params.emb, negatives)
        return h, e_pos, e_neg
    n_lookups = histories.size + targets.size + negatives.size
    use_full = (cooc.matrix.n_rows <= n_lookups) if prefer_full is None else prefer_full
    if use_full:
        table = nm.sparse_dense_matmul(cooc.matrix, params.emb)
        h = nm.gather(table, histories)
        e_pos = nm.gather(table, targets)
        e_neg = nm.gather(table, negatives)
    else:
        h = model_mod.sim_embed(cooc, params.emb, histories)
        e_pos = model_mod.embed_targets(cooc, params.emb, targets)
        e_neg = model_mod.embed_targets(cooc, params.emb, negatives)
    return h, e_pos, e_neg


def batch_loss(batch, negatives: np.ndarray, params: model_mod.ModelParams, cooc,
               prefer_full: bool | None = None):
    """Forward + backward on one batch; returns (loss, gradients per trainable)."""
    histories, masks, targets = batch
    h, e_pos, e_neg = _embed_for_batch(params, cooc, histories, targets, negatives,
                                       prefer_full=prefer_full)

    interests = model_mod.extract_interests(h, masks, params.w1, params.w2, params.pos)
    v_u, _ = model_mod.select_interest(interests.vectors, e_pos)

    z_pos = nm.row_dot(v_u, e_pos)                       # (B,)
    z_neg = nm.matmul(v_u, nm.transpose(e_neg))          # (B, n_neg)
    logits = nm.concat_cols(nm.reshape(z_pos, (len(targets), 1)), z_neg)
    nll = nm.add(nm.logsumexp(logits, axis=-1), nm.scale(z_pos, -1.0))
    loss = nm.mean_all(nll)

    if not np.isfinite(loss.data):
        raise FloatingPointError(
            f"non-finite loss {float(loss.data)} "
            f"(batch size {len(targets)}, logit range [{z_neg.data.min()}, {z_neg.data.max()}])"
        )

    params.zero_grad()
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params.trainables()]
    return float(loss.data), grads


def train(config: TrainConfig, split: data_mod.DatasetSplit, corpus: data_mod.SequenceCorpus, cooc):
    """Full training loop; returns the best-validation parameters and the log."""
    if not split.train:
        raise ValueError("empty training split")
    if config.mode == model_mod.MODE_SIMEMB and cooc is None:
        raise ValueError("simemb mode requires a co-occurrence matrix")

    rng = np.random.default_rng(config.seed)
    n_items = corpus.n_items
    params = model_mod.init_params(
        n_items,
        d=config.d,
        n_interests=config.K,
        seq_len=config.L,
        mode=config.mode,
        positional=config.positional,
        seed=config.seed,
    )
    state = nm.AdamState.for_params(params.trainables())
    log = TrainLog()

    train_users = np.asarray(split.train, dtype=np.int64)
    ema = None
    best_params = None
    best_recall = -np.inf
    evals_since_best = 0

    for iteration in range(1, config.max_iters + 1):
        users = rng.choice(train_users, size=config.batch, replace=True)
        batch = assemble_batch(corpus.sequences, users, rng, config.L)
        negatives = sample_negatives(n_items, config.n_negatives, rng)

        t0 = time.perf_counter()
        loss, grads = batch_loss(batch, negatives, params, cooc)
        nm.adam_step(params.trainables(), grads, state, config.lr)
        log.batch_seconds.append(time.perf_counter() - t0)

        log.losses.append(loss)
        ema = loss if ema is None else 0.98 * ema + 0.02 * loss

        if iteration % config.eval_every == 0:
            atlas = model_mod.item_atlas(params, cooc)
            report = eval_mod.evaluate(
                params, atlas, corpus.sequences, split.valid,
                cutoffs=(50,), max_len=params.seq_len,
            )
            recall50 = report.metrics[50]["recall"]
            window = log.batch_seconds[-config.eval_every:]
            log.evals.append(EvalPoint(iteration, float(ema), recall50, float(np.mean(window))))
            if recall50 > best_recall:
                best_recall = recall50
                best_params = params.copy()
                log.best_iteration = iteration
                evals_since_best = 0
            else:
                evals_since_best += 1
                if evals_since_best >= config.patience:
                    log.stopped_early = True
                    break

    return (best_params if best_params is not None else params), log


def benchmark(config: TrainConfig, split: data_mod.DatasetSplit, corpus: data_mod.SequenceCorpus,
              cooc, n_batches: int = 100) -> float:
    """Mean per-batch seconds (forward + backward + optimizer) for the given mode."""
    cfg = TrainConfig(**{**config.to_dict(), "max_iters": n_batches,
                         "eval_every": n_batches + 1, "patience": 1})
    _, log = train(cfg, split, corpus, cooc)
    return log.mean_batch_seconds()
