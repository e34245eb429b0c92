"""Exact small-scale checks linking shared-attribute similarity to co-occurrence.

Given a binary item-attribute incidence matrix R, the pairwise shared-attribute
similarity S = R R^T can be written as an invertible column transformation of
the zero-extended incidence matrix: [R : O] P = S, with P recoverable in closed
form. Inverting it, S P^{-1} reproduces [R : O] exactly, which is the identity
a normalized co-occurrence matrix can only approximate statistically. The
generator keeps instances small (items <= 64, attributes <= 16) so everything
is checkable in integer arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TheoryInstance:
    """One generated incidence matrix with its derived matrices."""

    attributes: np.ndarray   # R, (n_items, n_attrs) binary
    similarity: np.ndarray   # S = R R^T, integer
    transform: np.ndarray    # P, (n_items, n_items) integer, invertible

    @property
    def n_items(self) -> int:
        return self.attributes.shape[0]

    @property
    def n_attrs(self) -> int:
        return self.attributes.shape[1]


def attr_index_set(attributes: np.ndarray, item: int) -> set:
    """Indices of the attributes item possesses (nonzero columns of its row)."""
    return set(np.flatnonzero(attributes[item]).tolist())


def similarity_from_attributes(attributes: np.ndarray) -> np.ndarray:
    """Shared-attribute count matrix: column i is the sum of R's columns for item i's attributes."""
    R = np.asarray(attributes, dtype=np.int64)
    return R @ R.T


def extended_attributes(attributes: np.ndarray) -> np.ndarray:
    """[R : O], the incidence matrix zero-padded to square."""
    R = np.asarray(attributes, dtype=np.int64)
    n_items, n_attrs = R.shape
    return np.hstack([R, np.zeros((n_items, n_items - n_attrs), dtype=np.int64)])


def build_transform(attributes: np.ndarray) -> np.ndarray:
    """The square transform P with [R : O] P = S.

    Row j < n_attrs marks which items carry attribute j (the transpose of R);
    rows n_attrs.. are extended with the identity so P is square, which only
    adds the zero columns of O to the product. Requires the leading
    n_attrs x n_attrs incidence block to be invertible, which the instance
    generator guarantees by keeping it triangular with a unit diagonal.
    """
    R = np.asarray(attributes, dtype=np.int64)
    n_items, n_attrs = R.shape
    if n_items < n_attrs:
        raise ValueError("need n_items >= n_attrs for a square transform")
    P = np.zeros((n_items, n_items), dtype=np.int64)
    P[:n_attrs, :] = R.T
    for r in range(n_attrs, n_items):
        P[r, r] = 1
    block = P[:n_attrs, :n_attrs].astype(np.float64)
    if abs(np.linalg.det(block)) < 0.5:
        raise ValueError("leading incidence block is singular; regenerate the instance")
    return P


def verify_recovery(similarity: np.ndarray, transform: np.ndarray) -> np.ndarray:
    """S P^{-1}, which equals [R : O] up to linear-solve roundoff."""
    P = np.asarray(transform, dtype=np.float64)
    S = np.asarray(similarity, dtype=np.float64)
    try:
        return np.linalg.solve(P.T, S.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"transform solve failed: {exc}") from exc


def generate_instance(n_items: int, n_attrs: int, rng: np.random.Generator) -> TheoryInstance:
    """Random binary incidence matrix whose leading block is unit-triangular.

    Item j < n_attrs always has attribute j plus optionally lower-indexed ones,
    keeping the top block lower-triangular with ones on the diagonal; remaining
    items get arbitrary nonempty attribute sets.
    """
    if not (1 <= n_attrs <= n_items):
        raise ValueError("need 1 <= n_attrs <= n_items")
    if n_items > 64 or n_attrs > 16:
        raise ValueError("harness is exact-scale only: n_items <= 64, n_attrs <= 16")
    R = np.zeros((n_items, n_attrs), dtype=np.int64)
    for j in range(n_attrs):
        R[j, j] = 1
        if j > 0:
            extras = rng.random(j) < 0.3
            R[j, :j][extras] = 1
    for i in range(n_attrs, n_items):
        k = int(rng.integers(1, min(3, n_attrs) + 1))
        attrs = rng.choice(n_attrs, size=k, replace=False)
        R[i, attrs] = 1
    similarity = similarity_from_attributes(R)
    transform = build_transform(R)
    return TheoryInstance(attributes=R, similarity=similarity, transform=transform)


def check_instance(instance: TheoryInstance) -> dict:
    """Exact product identity and recovery residual for one instance."""
    ext = extended_attributes(instance.attributes)
    product = ext @ instance.transform
    exact = bool(np.array_equal(product, instance.similarity))
    recovered = verify_recovery(instance.similarity, instance.transform)
    residual = float(np.abs(recovered - ext).max())
    return {"product_exact": exact, "recovery_residual": residual}


def run_checks(n_items: int, n_attrs: int, seed: int, trials: int = 20) -> dict:
    """Generate `trials` instances and aggregate the worst-case results."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    all_exact = True
    for _ in range(trials):
        inst = generate_instance(n_items, n_attrs, rng)
        result = check_instance(inst)
        all_exact = all_exact and result["product_exact"]
        worst = max(worst, result["recovery_residual"])
    return {
        "trials": trials,
        "product_exact": all_exact,
        "max_recovery_residual": worst,
        "passed": all_exact and worst <= 1e-8,
    }
