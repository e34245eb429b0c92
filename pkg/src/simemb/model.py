"""Embedding layers and the self-attentive multi-interest extractor.

Two embedding modes share one architecture:
  * "simemb": item embeddings are rows of A @ E, where A is the normalized
    co-occurrence matrix and E is the trainable attribute-embedding table.
    Sequence embedding gathers the needed A rows first, so each batch costs a
    short-and-wide sparse product instead of materializing the full table.
  * "baseline": plain trainable per-item ID embeddings.

Interests come from two-layer tanh attention over the (optionally
position-augmented) sequence embedding; training picks the interest whose dot
product with the target is largest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import cooc as cooc_mod
from . import numeric as nm
from .numeric import Tensor

CKPT_MAGIC = b"SIMR"
CKPT_VERSION = 1

MODE_SIMEMB = "simemb"
MODE_BASELINE = "baseline"


@dataclass
class ModelParams:
    """All trainable tensors plus the dimensions they were built with."""

    mode: str
    emb: Tensor               # (n_items+1, d): attribute table (simemb) or ID table (baseline)
    w1: Tensor                # (d_attn, d)
    w2: Tensor                # (n_interests, d_attn)
    pos: Tensor | None        # (seq_len, d) positional table, optional
    n_items: int
    d: int
    n_interests: int
    d_attn: int
    seq_len: int

    def trainables(self) -> list:
        out = [self.emb, self.w1, self.w2]
        if self.pos is not None:
            out.append(self.pos)
        return out

    def zero_grad(self) -> None:
        for p in self.trainables():
            p.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            mode=self.mode,
            emb=Tensor(self.emb.data.copy(), requires_grad=True),
            w1=Tensor(self.w1.data.copy(), requires_grad=True),
            w2=Tensor(self.w2.data.copy(), requires_grad=True),
            pos=None if self.pos is None else Tensor(self.pos.data.copy(), requires_grad=True),
            n_items=self.n_items,
            d=self.d,
            n_interests=self.n_interests,
            d_attn=self.d_attn,
            seq_len=self.seq_len,
        )


@dataclass
class ItemAtlas:
    """Materialized item-embedding matrix used at serving time (row 0 = padding)."""

    matrix: np.ndarray  # (n_items+1, d)

    @property
    def n_items(self) -> int:
        return self.matrix.shape[0] - 1


@dataclass
class InterestMatrix:
    """Per-user interest vectors and the attention weights that produced them."""

    vectors: Tensor    # (..., n_interests, d)
    attention: Tensor  # (..., n_interests, seq_len), rows sum to 1 over unmasked positions


def init_params(
    n_items: int,
    d: int = 64,
    n_interests: int = 4,
    seq_len: int = 20,
    mode: str = MODE_SIMEMB,
    positional: bool = True,
    d_attn: int | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> ModelParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) init for all tables; padding row forced to zero."""
    if mode not in (MODE_SIMEMB, MODE_BASELINE):
        raise ValueError(f"unknown mode {mode!r}")
    if d_attn is None:
        d_attn = 4 * d
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)

    def table(shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    emb = table((n_items + 1, d))
    emb[0] = 0.0
    w1 = table((d_attn, d))
    w2 = table((n_interests, d_attn))
    pos = table((seq_len, d)) if positional else None
    return ModelParams(
        mode=mode,
        emb=Tensor(emb, requires_grad=True),
        w1=Tensor(w1, requires_grad=True),
        w2=Tensor(w2, requires_grad=True),
        pos=None if pos is None else Tensor(pos, requires_grad=True),
        n_items=n_items,
        d=d,
        n_interests=n_interests,
        d_attn=d_attn,
        seq_len=seq_len,
    )


def sim_embed(cooc: cooc_mod.CoocMatrix, emb: Tensor, history: np.ndarray) -> Tensor:
    """Embed item indices through the co-occurrence rows: out = A[history] @ E.

    `history` may carry leading batch dimensions; padding index 0 resolves to
    E's zero row. Differentiable w.r.t. E.
    """
    idx = np.asarray(history, dtype=np.int64)
    rows = cooc_mod.gather_rows(cooc, idx.reshape(-1))
    flat = nm.sparse_dense_matmul(rows, emb)
    return nm.reshape(flat, idx.shape + (emb.shape[1],))


def embed_targets(cooc: cooc_mod.CoocMatrix | None, emb: Tensor, indices: np.ndarray) -> Tensor:
    """Embed target/negative item indices; same math as sim_embed, or a plain lookup."""
    if cooc is None:
        return nm.gather(emb, np.asarray(indices, dtype=np.int64))
    return sim_embed(cooc, emb, indices)


def full_item_matrix(cooc: cooc_mod.CoocMatrix, emb: Tensor) -> ItemAtlas:
    """One full sparse product A @ E, materialized for serving. No gradients."""
    out = (cooc.matrix.to_scipy() @ emb.data.astype(np.float64, copy=False)).astype(emb.dtype)
    return ItemAtlas(matrix=out)


def baseline_item_matrix(emb: Tensor) -> ItemAtlas:
    return ItemAtlas(matrix=emb.data.copy())


def item_atlas(params: ModelParams, cooc: cooc_mod.CoocMatrix | None) -> ItemAtlas:
    if params.mode == MODE_SIMEMB:
        if cooc is None:
            raise ValueError("simemb mode needs the co-occurrence matrix to materialize the atlas")
        return full_item_matrix(cooc, params.emb)
    return baseline_item_matrix(params.emb)


def extract_interests(
    h: Tensor,
    mask: np.ndarray,
    w1: Tensor,
    w2: Tensor,
    pos: Tensor | None = None,
) -> InterestMatrix:
    """Two-layer tanh attention pooling of the sequence embedding.

    Scores are computed on the position-augmented sequence, but the interest
    vectors average the raw embedding rows. `h` is (..., seq_len, d); `mask`
    is (..., seq_len) with nonzero marking real positions.
    """
    scored = nm.add(h, pos) if pos is not None else h
    hidden = nm.tanh(nm.matmul(scored, nm.transpose(w1)))       # (..., L, d_attn)
    logits = nm.transpose(nm.matmul(hidden, nm.transpose(w2)))  # (..., K, L)
    mask = np.asarray(mask)
    attn = nm.masked_softmax(logits, mask[..., None, :], axis=-1)
    vectors = nm.matmul(attn, h)
    return InterestMatrix(vectors=vectors, attention=attn)


def select_interest(interests: Tensor, target_emb: Tensor) -> tuple[Tensor, np.ndarray]:
    """Pick the interest with the largest dot product against the target.

    The argmax index is a detached selection (ties go to the lowest index);
    gradient flows only through the chosen row.
    """
    v = interests.data
    e = target_emb.data
    if v.shape[-1] != e.shape[-1]:
        raise ValueError(f"select_interest: dims {v.shape} vs {e.shape}")
    scores = np.matmul(v, e[..., None])[..., 0]  # (..., K), detached
    chosen = scores.argmax(axis=-1)
    k = interests.shape[-2]
    onehot = np.zeros(scores.shape[:-1] + (1, k), dtype=interests.dtype)
    np.put_along_axis(onehot[..., 0, :], chosen[..., None], 1.0, axis=-1)
    picked = nm.matmul(Tensor(onehot), interests)   # (..., 1, d)
    picked = nm.reshape(picked, chosen.shape + (interests.shape[-1],))
    return picked, chosen


# ---------------------------------------------------------------------------
# checkpoint format: SIMR magic, version, mode/flag bytes, dims, f32 tensors,
# then the companion co-occurrence file path
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, cooc_path: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<BB", 1 if params.mode == MODE_SIMEMB else 0, 1 if params.pos is not None else 0))
        fh.write(struct.pack("<IIIII", params.n_items, params.d, params.n_interests, params.d_attn, params.seq_len))
        for t in (params.emb, params.w1, params.w2):
            fh.write(t.data.astype("<f4").tobytes())
        if params.pos is not None:
            fh.write(params.pos.data.astype("<f4").tobytes())
        encoded = str(cooc_path).encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)


def load_checkpoint(path) -> tuple[ModelParams, str]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint: expected magic {CKPT_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"bad checkpoint: expected version {CKPT_VERSION}, got {version}")
        mode_byte, pos_flag = struct.unpack("<BB", fh.read(2))
        n_items, d, n_interests, d_attn, seq_len = struct.unpack("<IIIII", fh.read(20))

        def read_tensor(shape):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            return Tensor(arr.astype(np.float32), requires_grad=True)

        emb = read_tensor((n_items + 1, d))
        w1 = read_tensor((d_attn, d))
        w2 = read_tensor((n_interests, d_attn))
        pos = read_tensor((seq_len, d)) if pos_flag else None
        (path_len,) = struct.unpack("<I", fh.read(4))
        cooc_path = fh.read(path_len).decode("utf-8")
    params = ModelParams(
        mode=MODE_SIMEMB if mode_byte else MODE_BASELINE,
        emb=emb,
        w1=w1,
        w2=w2,
        pos=pos,
        n_items=n_items,
        d=d,
        n_interests=n_interests,
        d_attn=d_attn,
        seq_len=seq_len,
    )
    return params, cooc_path
