"""Gradient aggregation: federated averaging and robust baselines.

Pairwise distances are computed by direct differences (``scipy.spatial.distance.pdist``),
so identical rows sit at distance exactly zero and Krum's lowest-index
tie-break is reproducible.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import pdist, squareform
from sklearn.base import BaseEstimator

from ._validation import ValidationError, check_index_set, check_message_matrix


class RuleKind(str, Enum):
    MEAN = "Mean"
    KRUM = "Krum"
    BULYAN = "Bulyan"
    TRIMMED_MEAN = "TrimmedMean"
    MEDIAN = "Median"
    MANDERA_THEN_MEAN = "ManderaThenMean"


@dataclass(frozen=True)
class AggregationRule:
    kind: RuleKind = RuleKind.MEAN
    assumed_f: int = None
    trim_beta: int = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        for name in ("assumed_f", "trim_beta"):
            val = getattr(self, name)
            if val is not None and (int(val) != val or val < 0):
                raise ValidationError(f"{name} must be a non-negative integer")

    def resolved(self, n0):
        """Fill unset ``assumed_f``/``trim_beta`` with the true malicious count."""
        return AggregationRule(self.kind,
                               n0 if self.assumed_f is None else self.assumed_f,
                               n0 if self.trim_beta is None else self.trim_beta)


def aggregate_mean(M, include=None):
    M = check_message_matrix(M, min_nodes=1)
    if include is None:
        return M.mean(axis=0)
    idx = check_index_set(include, M.shape[0], "include set")
    if idx.size == 0:
        raise ValidationError("include set is empty")
    return M[idx].mean(axis=0)


def pairwise_sq_distances(M):
    """Full (n, n) matrix of squared Euclidean distances between rows."""
    return squareform(pdist(M, "sqeuclidean"))


def _krum_scores(D, pool, n_neighbors):
    sub = D[np.ix_(pool, pool)]
    # column 0 of each sorted row is the zero self-distance
    near = np.sort(sub, axis=1)[:, 1:n_neighbors + 1]
    return near.sum(axis=1)


def krum_scores(M, assumed_f):
    M = check_message_matrix(M, min_nodes=1)
    n = M.shape[0]
    if n < assumed_f + 3:
        raise ValidationError(f"Krum needs n >= f + 3 (n={n}, f={assumed_f})")
    return _krum_scores(pairwise_sq_distances(M), np.arange(n), n - assumed_f - 2)


def krum_select(M, assumed_f):
    """Index of the single-Krum winner; ties go to the lowest index."""
    return int(np.argmin(krum_scores(M, assumed_f)))


def trimmed_mean(M, trim_beta):
    M = check_message_matrix(M, min_nodes=1)
    n = M.shape[0]
    if 2 * trim_beta >= n:
        raise ValidationError(f"trimmed mean needs 2*beta < n (n={n}, beta={trim_beta})")
    if trim_beta == 0:
        return M.mean(axis=0)
    srt = np.sort(M, axis=0)
    return srt[trim_beta:n - trim_beta].mean(axis=0)


def coordinate_median(M):
    M = check_message_matrix(M, min_nodes=1)
    return np.median(M, axis=0)


def bulyan_select(M, assumed_f):
    """Selection phase of Bulyan: indices of S in the order Krum picked them.

    Each round scores the remaining pool with Krum (n_pool - f - 2 neighbours,
    at least one) and moves the winner into S until |S| = n - 2f.
    """
    M = check_message_matrix(M, min_nodes=1)
    n = M.shape[0]
    f = int(assumed_f)
    if n < 4 * f + 3:
        raise ValidationError(f"Bulyan needs n >= 4f + 3 (n={n}, f={f})")
    D = pairwise_sq_distances(M)
    pool = list(range(n))
    selected = []
    while len(selected) < n - 2 * f:
        k = max(len(pool) - f - 2, 1)
        scores = _krum_scores(D, np.asarray(pool), k)
        selected.append(pool.pop(int(np.argmin(scores))))
    return np.asarray(selected, dtype=np.int64)


def bulyan_aggregate(S_rows, assumed_f):
    """Per coordinate, average the |S| - 2f values closest to the median of S."""
    theta = S_rows.shape[0]
    beta = theta - 2 * int(assumed_f)
    med = np.median(S_rows, axis=0)
    order = np.argsort(np.abs(S_rows - med), axis=0, kind="stable")[:beta]
    return np.take_along_axis(S_rows, order, axis=0).mean(axis=0)


def bulyan(M, assumed_f):
    M = check_message_matrix(M, min_nodes=1)
    sel = bulyan_select(M, assumed_f)
    return bulyan_aggregate(M[sel], assumed_f)


def aggregate(M, rule, detection=None):
    """Apply ``rule`` to ``M``. ``ManderaThenMean`` runs detection unless given."""
    rule = rule if isinstance(rule, AggregationRule) else AggregationRule(rule)
    kind = rule.kind
    if kind == RuleKind.MEAN:
        return aggregate_mean(M)
    if kind == RuleKind.KRUM:
        M = check_message_matrix(M, min_nodes=1)
        return M[krum_select(M, rule.assumed_f or 0)].copy()
    if kind == RuleKind.BULYAN:
        return bulyan(M, rule.assumed_f or 0)
    if kind == RuleKind.TRIMMED_MEAN:
        return trimmed_mean(M, rule.trim_beta or 0)
    if kind == RuleKind.MEDIAN:
        return coordinate_median(M)
    if kind == RuleKind.MANDERA_THEN_MEAN:
        from .detect import mandera

        det = detection if detection is not None else mandera(M)
        benign = np.flatnonzero(det.labels == 0)
        return aggregate_mean(M, benign if benign.size else None)
    raise ValidationError(f"unknown rule {kind!r}")


class RobustAggregator(BaseEstimator):
    """Estimator wrapper: ``fit(M)`` stores the aggregated gradient in ``aggregate_``."""

    def __init__(self, rule="Mean", assumed_f=0, trim_beta=0):
        self.rule = rule
        self.assumed_f = assumed_f
        self.trim_beta = trim_beta

    def fit(self, X, y=None):
        X = check_message_matrix(X, min_nodes=1)
        self.rule_ = AggregationRule(self.rule, self.assumed_f, self.trim_beta)
        self.n_features_in_ = X.shape[1]
        if self.rule_.kind == RuleKind.KRUM:
            self.selected_ = krum_select(X, self.assumed_f)
        elif self.rule_.kind == RuleKind.BULYAN:
            self.selected_ = bulyan_select(X, self.assumed_f)
        self.aggregate_ = aggregate(X, self.rule_)
        return self
