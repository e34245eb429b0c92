"""Normalized sparse item co-occurrence matrix: construction, row gathering, binary IO.

Index 0 is the padding sentinel everywhere: the matrix is (n_items+1) square,
row 0 holds the single entry (0, 0) = 1 so padded history positions resolve to
the zero embedding row downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

COOC_MAGIC = b"COOC"
COOC_VERSION = 1


@dataclass
class SparseRowMatrix:
    """CSR matrix with nonnegative values and strictly increasing columns per row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray  # int64, length n_rows + 1
    col_indices: np.ndarray  # int32
    values: np.ndarray       # float64 in memory (f32 on disk)
    _csr: sps.csr_matrix | None = field(default=None, repr=False, compare=False)
    _csr_t: sps.spmatrix | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        if len(self.row_offsets) != self.n_rows + 1:
            raise ValueError("row_offsets length must be n_rows + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.col_indices):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(self.col_indices) != len(self.values):
            raise ValueError("col_indices and values lengths differ")
        if self.col_indices.size:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValueError("column index out of range")
        for r in range(self.n_rows):
            cols = self.col_indices[self.row_offsets[r]:self.row_offsets[r + 1]]
            if cols.size > 1 and np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {r}: columns not strictly increasing")
        if not np.isfinite(self.values).all() or (self.values.size and self.values.min() < 0):
            raise ValueError("values must be finite and nonnegative")

    @property
    def nnz(self) -> int:
        return int(len(self.values))

    def to_scipy(self) -> sps.csr_matrix:
        if self._csr is None:
            self._csr = sps.csr_matrix(
                (self.values.astype(np.float64, copy=False),
                 self.col_indices.astype(np.int64, copy=False),
                 self.row_offsets.astype(np.int64, copy=False)),
                shape=(self.n_rows, self.n_cols),
            )
        return self._csr

    def to_scipy_t(self) -> sps.csc_matrix:
        # CSC transpose view: O(1), and csc @ dense multiplies natively
        if self._csr_t is None:
            self._csr_t = self.to_scipy().T
        return self._csr_t

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row i, copied."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi].copy(), self.values[lo:hi].copy()


@dataclass
class CoocMatrix:
    """Row-normalized co-occurrence matrix plus its construction metadata."""

    matrix: SparseRowMatrix
    threshold: int           # step-interval threshold the counts were built with
    density: float           # nnz over the real-item block / n_items^2, pre-normalization
    normalized: bool = True

    @property
    def n_items(self) -> int:
        return self.matrix.n_rows - 1


def accumulate(sequences, threshold: int) -> dict:
    """Weighted pair counts over all within-sequence position pairs.

    For positions p < q at step interval d = q - p, the pair gains
    max(threshold - d, 0) on both (i, j) and (j, i). Returns a mergeable
    {(i, j): weight} map.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    counts: dict[tuple[int, int], float] = {}
    for items in sequences:
        items = list(items)
        n = len(items)
        for p in range(n):
            i = items[p]
            # pairs at interval >= threshold contribute nothing
            for q in range(p + 1, min(p + threshold, n)):
                j = items[q]
                w = float(threshold - (q - p))
                counts[(i, j)] = counts.get((i, j), 0.0) + w
                if i != j:
                    counts[(j, i)] = counts.get((j, i), 0.0) + w
    return counts


def merge_counts(*count_maps: dict) -> dict:
    """Commutative merge of accumulate() outputs from sequence shards."""
    merged: dict[tuple[int, int], float] = {}
    for counts in count_maps:
        for key, w in counts.items():
            merged[key] = merged.get(key, 0.0) + w
    return merged


def finalize(raw_counts: dict, n_items: int, threshold: int = 0) -> CoocMatrix:
    """Assemble the (n_items+1) square CSR, force the diagonal to 1, row-normalize."""
    rows: list[int] = [0]
    cols: list[int] = [0]
    vals: list[float] = [1.0]
    for (i, j), w in raw_counts.items():
        if not (1 <= i <= n_items and 1 <= j <= n_items):
            raise ValueError(f"count key ({i}, {j}) outside item range [1, {n_items}]")
        if i == j:
            continue  # diagonal is overwritten below
        rows.append(i)
        cols.append(j)
        vals.append(w)
    diag = np.arange(1, n_items + 1)
    row_arr = np.concatenate([np.asarray(rows, dtype=np.int64), diag])
    col_arr = np.concatenate([np.asarray(cols, dtype=np.int64), diag])
    val_arr = np.concatenate([np.asarray(vals, dtype=np.float64), np.ones(n_items)])

    order = np.lexsort((col_arr, row_arr))
    row_arr, col_arr, val_arr = row_arr[order], col_arr[order], val_arr[order]

    n = n_items + 1
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, row_arr + 1, 1)
    offsets = np.cumsum(offsets)

    nnz_real = len(val_arr) - 1  # everything except the (0, 0) sentinel entry
    density = nnz_real / float(n_items * n_items)

    row_sums = np.add.reduceat(val_arr, offsets[:-1])
    val_arr = val_arr / np.repeat(row_sums, np.diff(offsets))

    matrix = SparseRowMatrix(
        n_rows=n,
        n_cols=n,
        row_offsets=offsets,
        col_indices=col_arr.astype(np.int32),
        values=val_arr,
    )
    matrix.validate()
    return CoocMatrix(matrix=matrix, threshold=threshold, density=density, normalized=True)


def build(sequences, n_items: int, threshold: int) -> CoocMatrix:
    """accumulate + finalize over training-split sequences."""
    return finalize(accumulate(sequences, threshold), n_items, threshold=threshold)


def gather_rows(cooc: CoocMatrix, indices) -> SparseRowMatrix:
    """Stack copies of the requested rows into a new CSR of shape (len(indices), n)."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    m = cooc.matrix
    if idx.size and (idx.min() < 0 or idx.max() >= m.n_rows):
        raise ValueError(f"row index out of range for matrix with {m.n_rows} rows")
    starts = m.row_offsets[idx]
    lengths = m.row_offsets[idx + 1] - starts
    offsets = np.zeros(len(idx) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    total = int(offsets[-1])
    # flat source positions: per output row, starts[r] + (0 .. lengths[r])
    positions = np.repeat(starts - offsets[:-1], lengths) + np.arange(total, dtype=np.int64)
    return SparseRowMatrix(
        n_rows=len(idx),
        n_cols=m.n_cols,
        row_offsets=offsets,
        col_indices=m.col_indices[positions].copy(),
        values=m.values[positions].copy(),
    )


def save_cooc(path, cooc: CoocMatrix) -> None:
    """Little-endian binary CSR: COOC magic, version, dims, nnz, arrays, footer."""
    m = cooc.matrix
    with open(path, "wb") as fh:
        fh.write(COOC_MAGIC)
        fh.write(struct.pack("<I", COOC_VERSION))
        fh.write(struct.pack("<QQQ", m.n_rows, m.n_cols, m.nnz))
        fh.write(m.row_offsets.astype("<u8").tobytes())
        fh.write(m.col_indices.astype("<u4").tobytes())
        fh.write(m.values.astype("<f4").tobytes())
        fh.write(struct.pack("<Id?", cooc.threshold, cooc.density, cooc.normalized))


def load_cooc(path) -> CoocMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != COOC_MAGIC:
            raise ValueError(f"bad co-occurrence file: expected magic {COOC_MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != COOC_VERSION:
            raise ValueError(f"bad co-occurrence file: expected version {COOC_VERSION}, got {version}")
        n_rows, n_cols, nnz = struct.unpack("<QQQ", fh.read(24))
        row_offsets = np.frombuffer(fh.read(8 * (n_rows + 1)), dtype="<u8").astype(np.int64)
        col_indices = np.frombuffer(fh.read(4 * nnz), dtype="<u4").astype(np.int32)
        values = np.frombuffer(fh.read(4 * nnz), dtype="<f4").astype(np.float64)
        threshold, density, normalized = struct.unpack("<Id?", fh.read(13))
    matrix = SparseRowMatrix(
        n_rows=int(n_rows),
        n_cols=int(n_cols),
        row_offsets=row_offsets,
        col_indices=col_indices,
        values=values,
    )
    matrix.validate()
    return CoocMatrix(matrix=matrix, threshold=threshold, density=density, normalized=normalized)
