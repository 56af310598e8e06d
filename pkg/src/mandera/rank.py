"""Column-wise average-tie ranking of message matrices and per-node rank moments.

Rank 1 is the largest value in a column. Tied values (exact equality) share
the mean of the ranks they span, so every column of ranks sums to n(n+1)/2.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ValidationError, check_finite, check_message_matrix

#: columns ranked per block by :func:`node_moments`; memory is O(n * CHUNK)
CHUNK = 1024


@dataclass(frozen=True)
class NodeMoments:
    """Per-node mean ``e``, population variance ``v`` and SD ``s`` of ranks."""

    e: np.ndarray
    v: np.ndarray

    @property
    def s(self):
        return np.sqrt(self.v)

    def as_points(self):
        """(n, 2) array of ``(e_i, s_i)``, the detector's clustering features."""
        return np.column_stack([self.e, self.s])


def _rank_rows(block):
    """Descending average ranks along axis 1 of a C-contiguous (c, n) block."""
    c, n = block.shape
    order = np.argsort(block, axis=1)
    srt = np.take_along_axis(block, order, axis=1)
    # ascending position k (0-based) maps to descending rank n - k
    pos_rank = np.broadcast_to(np.arange(n, 0, -1, dtype=np.float64), (c, n))
    if n > 1:
        ties = srt[:, 1:] == srt[:, :-1]
        if ties.any():
            pos = np.broadcast_to(np.arange(n), (c, n))
            start = np.ones((c, n), dtype=bool)
            start[:, 1:] = ~ties
            end = np.ones((c, n), dtype=bool)
            end[:, :-1] = ~ties
            first = np.maximum.accumulate(np.where(start, pos, 0), axis=1)
            last = np.minimum.accumulate(np.where(end, pos, n - 1)[:, ::-1], axis=1)[:, ::-1]
            pos_rank = n - 0.5 * (first + last)
    ranks = np.empty((c, n), dtype=np.float64)
    np.put_along_axis(ranks, order, pos_rank, axis=1)
    return ranks


def rank_column(column):
    """Average-tie descending ranks of a 1-D vector.

    >>> rank_column([1.1, -2, 3.2])
    array([2., 3., 1.])
    """
    col = np.asarray(column, dtype=np.float64)
    if col.ndim != 1 or col.size == 0:
        raise ValidationError("rank_column expects a non-empty 1-D vector")
    check_finite(col, "column")
    return _rank_rows(col[None, :])[0]


def rank_matrix(M):
    """Replace every column of ``M`` by its rank vector."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValidationError("rank_matrix expects a non-empty 2-D array")
    bad = ~np.isfinite(M)
    if bad.any():
        i, j = (int(x) for x in np.argwhere(bad)[0])
        raise ValidationError(f"non-finite value in column {j} at row {i}")
    n, p = M.shape
    R = np.empty((n, p), dtype=np.float64)
    for a in range(0, p, CHUNK):
        R[:, a:a + CHUNK] = _rank_rows(np.ascontiguousarray(M[:, a:a + CHUNK].T)).T
    return R


def rank_sums(M, chunk=CHUNK):
    """Stream over column blocks, returning per-row (sum R, sum R^2)."""
    n, p = M.shape
    s1 = np.zeros(n)
    s2 = np.zeros(n)
    for a in range(0, p, chunk):
        ranks = _rank_rows(np.ascontiguousarray(M[:, a:a + chunk].T))
        s1 += ranks.sum(axis=0)
        s2 += np.einsum("ij,ij->j", ranks, ranks)
    return s1, s2


def node_moments(M, chunk=CHUNK):
    """Mean and population variance of each row of the rank matrix of ``M``.

    The rank matrix is never materialized; ranks are accumulated one block of
    ``chunk`` columns at a time.
    """
    M = check_message_matrix(M, min_nodes=1)
    p = M.shape[1]
    s1, s2 = rank_sums(M, chunk)
    e = s1 / p
    v = np.maximum(s2 / p - e * e, 0.0)
    return NodeMoments(e=e, v=v)


def concat_epochs(matrices, node_ids=None):
    """Column-concatenate per-epoch message matrices for multi-epoch detection.

    ``node_ids`` is an optional list (one per matrix) of row identifiers; rows
    must refer to the same nodes in the same order in every epoch.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise ValidationError("concat_epochs needs at least one matrix")
    n = mats[0].shape[0]
    for k, m in enumerate(mats):
        if m.ndim != 2 or m.shape[0] != n:
            raise ValidationError(f"epoch {k} has shape {m.shape}, expected {n} rows")
    if node_ids is not None:
        if len(node_ids) != len(mats):
            raise ValidationError("node_ids must have one entry per matrix")
        ref = np.asarray(node_ids[0])
        for k, ids in enumerate(node_ids):
            if not np.array_equal(np.asarray(ids), ref):
                raise ValidationError(f"node_ids of epoch {k} differ from epoch 0")
    if len(mats) == 1:
        return mats[0]
    return np.concatenate(mats, axis=1)


class RankMoments(TransformerMixin, BaseEstimator):
    """Map a message matrix to per-node ``(e_i, s_i)`` rank moments.

    Stateless: ``fit`` only validates. ``transform`` returns an (n, 2) array.
    """

    def __init__(self, chunk_size=CHUNK):
        self.chunk_size = chunk_size

    def fit(self, X, y=None):
        X = check_message_matrix(X, min_nodes=1)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return node_moments(X, chunk=self.chunk_size).as_points()
