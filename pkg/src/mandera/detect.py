"""MANDERA: rank moments, 2-means on ``(e_i, s_i)``, malicious-cluster choice."""

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import ValidationError, check_message_matrix
from .rank import CHUNK, node_moments

MAX_ITER = 100
#: centroid gap / pooled within-cluster SD below which a split is flagged
SEPARATION_THRESHOLD = 4.0


class SelectionRule(str, Enum):
    DUPLICATE_ROWS = "DuplicateRows"
    SMALLER_CLUSTER = "SmallerCluster"
    TIGHTER_SPREAD = "TighterSpread"
    TIE_LOW_INDEX = "TieLowIndex"
    DEGENERATE = "Degenerate"


@dataclass
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    iterations: int
    inertia: float
    degenerate: bool = False


@dataclass
class DetectionResult:
    labels: np.ndarray  # 1 = malicious
    centroids: np.ndarray
    rule: SelectionRule
    iterations: int
    ambiguous: bool
    assignment: np.ndarray = None
    malicious_cluster: int = None
    separation: float = float("nan")
    points: np.ndarray = field(default=None, repr=False)

    @property
    def malicious(self):
        return np.flatnonzero(self.labels == 1)

    def to_dict(self):
        return {
            "labels": [int(x) for x in self.labels],
            "centroids": [[float(c) for c in row] for row in self.centroids],
            "rule": self.rule.value,
            "ambiguous": bool(self.ambiguous),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def _inertia(X, assignment):
    total = 0.0
    for k in (0, 1):
        pts = X[assignment == k]
        if len(pts):
            total += float(((pts - pts.mean(axis=0)) ** 2).sum())
    return total


def _lloyd(X, centroids, max_iter):
    """Returns the number of assign-and-update steps; the pass confirming
    convergence is not counted."""
    assignment = None
    done = 0
    while done < max_iter:
        d = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d, axis=1)
        for k in (0, 1):
            if not (new == k).any():
                # empty cluster: hand it the point farthest from its centroid
                far = int(np.argmax(d[np.arange(len(X)), new]))
                new[far] = k
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        centroids = np.array([X[assignment == k].mean(axis=0) for k in (0, 1)])
        done += 1
    return assignment, centroids, done


def _split_costs(xs, ys):
    """Within-cluster sum of squares for every prefix split of each row."""
    n = xs.shape[1]
    Sx, Sy = np.cumsum(xs, axis=1), np.cumsum(ys, axis=1)
    Q = np.cumsum(xs * xs + ys * ys, axis=1)
    k = np.arange(1, n)
    rx, ry = Sx[:, -1:] - Sx[:, :-1], Sy[:, -1:] - Sy[:, :-1]
    left = Q[:, :-1] - (Sx[:, :-1] ** 2 + Sy[:, :-1] ** 2) / k
    right = (Q[:, -1:] - Q[:, :-1]) - (rx ** 2 + ry ** 2) / (n - k)
    return left + right, (Sx, Sy, Q)


def _best_linear_split(X):
    """Globally optimal 2-partition of 2-D points.

    An optimal 2-means partition is separated by a line, so it is a prefix of
    the points sorted by signed distance to some line through two points,
    with the two defining points taken in either order.
    """
    n = len(X)
    x, y = X[:, 0], X[:, 1]
    i, j = np.triu_indices(n, k=1)
    dx, dy = x[j] - x[i], y[j] - y[i]
    keep = (dx != 0) | (dy != 0)
    i, j, dx, dy = i[keep], j[keep], dx[keep], dy[keep]
    m = i.size
    if m == 0:
        return None
    # one row per candidate line, one column per point
    rel_x = x[None, :] - x[i][:, None]
    rel_y = y[None, :] - y[i][:, None]
    side = dx[:, None] * rel_y - dy[:, None] * rel_x  # exactly 0 at i and j
    order = np.argsort(side, axis=1, kind="stable")
    rows = np.arange(m)
    pos = np.empty_like(order)
    pos[rows[:, None], order] = np.arange(n)[None, :]
    # with only i and j on the line they sit adjacent: i first, j second
    lo = np.minimum(pos[rows, i], pos[rows, j])
    order[rows, lo], order[rows, lo + 1] = i, j
    crowded = np.flatnonzero((side == 0).sum(axis=1) > 2)
    if crowded.size:
        along = dx[crowded, None] * rel_x[crowded] + dy[crowded, None] * rel_y[crowded]
        order[crowded] = np.lexsort((along, side[crowded]), axis=1)
    cost, (Sx, Sy, Q) = _split_costs(x[order], y[order])

    # reversed order of i and j: the only new prefix is the one holding j alone
    sx = Sx[rows, lo] - x[i] + x[j]
    sy = Sy[rows, lo] - y[i] + y[j]
    q = Q[rows, lo] - (x[i] ** 2 + y[i] ** 2) + (x[j] ** 2 + y[j] ** 2)
    k = lo + 1
    rx, ry = Sx[:, -1] - sx, Sy[:, -1] - sy
    swap_cost = (q - (sx ** 2 + sy ** 2) / k) + ((Q[:, -1] - q) - (rx ** 2 + ry ** 2) / (n - k))

    best_row, best_split = np.unravel_index(int(np.argmin(cost)), cost.shape)
    best = cost[best_row, best_split]
    members = order[best_row, :best_split + 1]
    r = int(np.argmin(swap_cost))
    if swap_cost[r] < best:
        best = swap_cost[r]
        members = np.concatenate([order[r, :lo[r]], [j[r]]])
    if crowded.size:
        along = dx[crowded, None] * rel_x[crowded] + dy[crowded, None] * rel_y[crowded]
        back = np.lexsort((-along, side[crowded]), axis=1)
        bcost, _ = _split_costs(x[back], y[back])
        br, bs = np.unravel_index(int(np.argmin(bcost)), bcost.shape)
        if bcost[br, bs] < best:
            members = back[br, :bs + 1]
    assignment = np.ones(n, dtype=np.int64)
    assignment[members] = 0
    return assignment


def kmeans2(points, max_iter=MAX_ITER):
    """Two-cluster Lloyd's algorithm with farthest-pair seeding.

    Seeds are the two points at maximal distance (lowest index pair on ties).
    For 2-D inputs the Lloyd fixed point is checked against the exact best
    linear split; if that split has lower inertia, Lloyd restarts from it.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("kmeans2 needs at least two points")
    n = X.shape[0]
    D = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    flat = int(np.argmax(np.triu(D, k=1)))
    a, b = divmod(flat, n)
    if D[a, b] == 0.0:
        return KMeansResult(np.zeros(n, dtype=np.int64), np.array([X[0], X[0]]), 0, 0.0, True)
    assignment, centroids, iters = _lloyd(X, X[[a, b]].copy(), max_iter)
    inertia = _inertia(X, assignment)
    if X.shape[1] == 2 and n > 2:
        exact = _best_linear_split(X)
        if exact is not None:
            exact_inertia = _inertia(X, exact)
            if exact_inertia < inertia * (1 - 1e-12) - 1e-12:
                start = np.array([X[exact == k].mean(axis=0) for k in (0, 1)])
                assignment, centroids, more = _lloyd(X, start, max_iter)
                iters += more
                inertia = _inertia(X, assignment)
    return KMeansResult(assignment.astype(np.int64), centroids, iters, inertia)


def _duplicate_counts(M, assignment, points):
    """Rows per cluster that have an exact copy in the same cluster."""
    counts = [0, 0]
    # equal rows have bitwise-equal moments, so only rows sharing a point and
    # a cluster can match
    groups = {}
    for i, key in enumerate(map(tuple, points)):
        groups.setdefault((key, int(assignment[i])), []).append(i)
    for (_, k), members in groups.items():
        if len(members) < 2:
            continue
        classes = []  # rows grouped by exact equality, first row as representative
        for i in members:
            for cls in classes:
                if np.array_equal(M[cls[0]], M[i]):
                    cls.append(i)
                    break
            else:
                classes.append([i])
        counts[k] += sum(len(cls) for cls in classes if len(cls) > 1)
    return counts


def _separation(points, assignment, centroids):
    resid = points - centroids[assignment]
    pooled = np.sqrt((resid ** 2).sum() / max(len(points) - 2, 1))
    gap = float(np.linalg.norm(centroids[0] - centroids[1]))
    if pooled == 0:
        return float("inf") if gap > 0 else 0.0
    return gap / pooled


def select_malicious(assignment, M, points=None, centroids=None, iterations=0):
    """Decide which of the two clusters is malicious.

    Order: the cluster holding more exact duplicate rows (only clusters of at
    most n/2 rows qualify); else the smaller cluster; else the cluster with the
    smaller spread of ``s_i``; else cluster 0, flagged ambiguous.
    """
    return _select(np.asarray(assignment, dtype=np.int64), check_message_matrix(M, min_nodes=1),
                   points, centroids, iterations)


def _select(assignment, M, points, centroids, iterations):
    n = len(assignment)
    if points is None:
        points = node_moments(M).as_points()
    sizes = [int((assignment == k).sum()) for k in (0, 1)]
    if min(sizes) == 0:
        c = points.mean(axis=0)
        return DetectionResult(np.zeros(n, dtype=np.int64), np.array([c, c]),
                               SelectionRule.DEGENERATE, iterations, True,
                               assignment, None, 0.0, points)
    if centroids is None:
        centroids = np.array([points[assignment == k].mean(axis=0) for k in (0, 1)])
    separation = _separation(points, assignment, centroids)
    ambiguous = separation < SEPARATION_THRESHOLD

    dups = _duplicate_counts(M, assignment, points)
    eligible = [k for k in (0, 1) if sizes[k] <= n // 2 and dups[k] > 0]
    chosen = None
    if eligible:
        if len(eligible) == 1:
            chosen, rule = eligible[0], SelectionRule.DUPLICATE_ROWS
        elif dups[0] != dups[1]:
            chosen, rule = int(np.argmax(dups)), SelectionRule.DUPLICATE_ROWS
    if chosen is None and sizes[0] != sizes[1]:
        chosen, rule = int(np.argmin(sizes)), SelectionRule.SMALLER_CLUSTER
    if chosen is None:
        spread = [np.ptp(points[assignment == k, 1]) for k in (0, 1)]
        if spread[0] != spread[1]:
            chosen, rule = int(np.argmin(spread)), SelectionRule.TIGHTER_SPREAD
        else:
            chosen, rule, ambiguous = 0, SelectionRule.TIE_LOW_INDEX, True
    labels = (assignment == chosen).astype(np.int64)
    return DetectionResult(labels, centroids, rule, iterations, bool(ambiguous),
                           assignment, chosen, separation, points)


def mandera(M, chunk=CHUNK, max_iter=MAX_ITER):
    """Detect malicious rows of a message matrix without knowing their number."""
    M = check_message_matrix(M, min_nodes=4)
    points = node_moments(M, chunk=chunk).as_points()
    km = kmeans2(points, max_iter=max_iter)
    centroids = None if km.degenerate else km.centroids
    return _select(km.assignment, M, points, centroids, km.iterations)


class ManderaDetector(ClusterMixin, BaseEstimator):
    """Estimator form of :func:`mandera`.

    After ``fit(M)``: ``labels_`` (1 = malicious), ``moments_`` (n, 2) of
    ``(e_i, s_i)``, ``cluster_centers_`` and the full ``result_``.
    """

    def __init__(self, max_iter=MAX_ITER, chunk_size=CHUNK):
        self.max_iter = max_iter
        self.chunk_size = chunk_size

    def fit(self, X, y=None):
        X = check_message_matrix(X, min_nodes=4)
        self.n_features_in_ = X.shape[1]
        self.result_ = mandera(X, chunk=self.chunk_size, max_iter=self.max_iter)
        self.labels_ = self.result_.labels
        self.moments_ = self.result_.points
        self.cluster_centers_ = self.result_.centroids
        return self
