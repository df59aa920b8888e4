"""Structural-similarity column reordering.

The quantization loop picks its next block greedily: the k not-yet-quantized
columns whose cosine similarity to the mean of the remaining residual
columns is highest. Grouping directionally similar (and outlier) columns
tightens per-block value ranges for the row-wise ternary grid. The full
pairwise similarity matrix and the per-block variance profile are
diagnostics only.

All selection is deterministic: no RNG, ties broken by ascending original
column index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TensorDataError
from .validation import as_matrix, check_permutation

__all__ = [
    "PermutationTrace",
    "block_variance_profile",
    "cosine_similarity_matrix",
    "select_next_block",
]


def cosine_similarity_matrix(w: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of columns; S[i,j] = <w_i, w_j>/(|w_i||w_j|).

    Zero-norm columns take similarity 0 everywhere (including the diagonal)
    by convention; nonzero diagonals are exactly 1.
    """
    w = as_matrix(w, "w")
    norms = np.linalg.norm(w, axis=0)
    nz = norms > 0
    safe = np.where(nz, norms, 1.0)
    s = (w.T @ w) / np.outer(safe, safe)
    s[~nz, :] = 0.0
    s[:, ~nz] = 0.0
    np.fill_diagonal(s, np.where(nz, 1.0, 0.0))
    return s


def select_next_block(w_remaining: np.ndarray, k: int) -> np.ndarray:
    """Pick the next quantization block from the residual submatrix.

    Returns indices INTO w_remaining's columns (the caller maps them back to
    original positions): the k columns most cosine-similar to the mean of
    the remaining columns, ranked by descending similarity with ties broken
    by ascending index. k is clipped to the remaining count, in which case
    (and when the mean vector is zero) the columns come back in their given
    order.
    """
    w = as_matrix(w_remaining, "w_remaining")
    r = w.shape[1]
    if r == 0:
        raise TensorDataError("no columns remain")
    k = min(int(k), r)
    if k == r:
        return np.arange(r)
    mean = w.mean(axis=1)
    mean_norm = float(np.linalg.norm(mean))
    if mean_norm == 0.0:
        return np.arange(k)
    norms = np.linalg.norm(w, axis=0)
    nz = norms > 0
    sims = np.zeros(r)
    sims[nz] = (w[:, nz].T @ mean) / (norms[nz] * mean_norm)
    ranked = np.lexsort((np.arange(r), -sims))
    return ranked[:k]


def block_variance_profile(w: np.ndarray, order, k: int) -> np.ndarray:
    """Variance of all entries in each size-k column block under `order`.

    The diagnostic for reorder quality: tighter blocks mean the row grids
    cover narrower ranges.
    """
    w = as_matrix(w, "w")
    m = w.shape[1]
    perm = check_permutation(order, m, "order")
    if k < 1:
        raise TensorDataError("k must be >= 1")
    wp = w[:, perm]
    n_blocks = -(-m // k)
    out = np.empty(n_blocks)
    for b in range(n_blocks):
        out[b] = np.var(wp[:, b * k:(b + 1) * k])
    return out


@dataclass
class PermutationTrace:
    """Quantization-order column indices, grown block by block."""

    m: int
    order: list[int] = field(default_factory=list)
    _seen: set[int] = field(default_factory=set, repr=False)

    def extend(self, indices) -> None:
        for i in np.asarray(indices, dtype=np.int64).ravel():
            i = int(i)
            if i < 0 or i >= self.m:
                raise TensorDataError(f"column index {i} out of range for m={self.m}")
            if i in self._seen:
                raise TensorDataError(f"column {i} selected twice")
            self._seen.add(i)
            self.order.append(i)

    @property
    def complete(self) -> bool:
        return len(self.order) == self.m

    def permutation(self) -> np.ndarray:
        """Quantized-position -> original-column map (validated bijection)."""
        if not self.complete:
            raise TensorDataError(
                f"permutation incomplete: {len(self.order)} of {self.m} columns")
        return check_permutation(np.asarray(self.order), self.m, "order")

    def inverse(self) -> np.ndarray:
        """Original-column -> quantized-position map."""
        return np.argsort(self.permutation(), kind="stable")
