"""Reference implementations written from the definitions, with plain loops.

Nothing here imports the package under test.
"""

import itertools
from fractions import Fraction

import numpy as np


def rank_by_counting(values):
    """Descending average rank: 1 + #larger + (#equal others) / 2."""
    vals = [float(v) for v in values]
    out = []
    for x in vals:
        larger = sum(1 for y in vals if y > x)
        equal_others = sum(1 for y in vals if y == x) - 1
        out.append(1 + larger + equal_others / 2)
    return np.array(out)


def rank_by_sorting(values):
    """Sort descending, hand out 1..n, then average each block of equal values."""
    vals = [float(v) for v in values]
    order = sorted(range(len(vals)), key=lambda i: -vals[i])
    ranks = [0.0] * len(vals)
    k = 0
    while k < len(order):
        end = k
        while end + 1 < len(order) and vals[order[end + 1]] == vals[order[k]]:
            end += 1
        avg = ((k + 1) + (end + 1)) / 2
        for t in range(k, end + 1):
            ranks[order[t]] = avg
        k = end + 1
    return np.array(ranks)


def moments_two_pass(M):
    """Rank every column, then mean and population variance of each row."""
    M = np.asarray(M, dtype=float)
    R = np.column_stack([rank_by_sorting(M[:, j]) for j in range(M.shape[1])])
    e = R.mean(axis=1)
    v = ((R - e[:, None]) ** 2).mean(axis=1)
    return e, v


def sq_dist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def krum_oracle(M, f):
    n = len(M)
    k = n - f - 2
    scores = []
    for i in range(n):
        d = sorted(sq_dist(M[i], M[j]) for j in range(n) if j != i)
        scores.append(sum(d[:k]))
    best = min(scores)
    return scores.index(best), scores


def median_oracle(M):
    M = np.asarray(M, dtype=float)
    out = []
    for col in M.T:
        s = sorted(col)
        m = len(s)
        out.append(s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2)
    return np.array(out)


def trimmed_mean_oracle(M, beta):
    M = np.asarray(M, dtype=float)
    out = []
    for col in M.T:
        s = sorted(col)
        kept = s[beta:len(s) - beta]
        out.append(sum(kept) / len(kept))
    return np.array(out)


def bulyan_oracle(M, f):
    """Recursive Krum selection of n - 2f rows, then per-coordinate averaging of
    the n - 4f values nearest the median (nearest first, lowest position on ties)."""
    M = np.asarray(M, dtype=float)
    n = len(M)
    pool = list(range(n))
    S = []
    while len(S) < n - 2 * f:
        sub = M[pool]
        k = max(len(pool) - f - 2, 1)
        scores = []
        for a in range(len(pool)):
            d = sorted(sq_dist(sub[a], sub[b]) for b in range(len(pool)) if b != a)
            scores.append(sum(d[:k]))
        win = scores.index(min(scores))
        S.append(pool.pop(win))
    rows = M[S]
    beta = len(S) - 2 * f
    med = median_oracle(rows)
    out = []
    for j in range(M.shape[1]):
        col = rows[:, j]
        nearest = sorted(range(len(col)), key=lambda t: (abs(col[t] - med[j]), t))[:beta]
        out.append(sum(col[t] for t in nearest) / beta)
    return S, np.array(out)


def best_partition_inertia(points):
    """Minimum two-cluster within-cluster sum of squares over all 2^n splits."""
    X = np.asarray(points, dtype=float)
    n = len(X)
    best = np.inf
    for mask in itertools.product((0, 1), repeat=n - 1):
        a = np.array((0,) + mask, dtype=bool)  # fix point 0 in cluster 0
        if a.all() or not a.any():
            continue
        cost = 0.0
        for grp in (X[~a], X[a]):
            cost += float(((grp - grp.mean(axis=0)) ** 2).sum())
        best = min(best, cost)
    return best


def sq_mean_oracle(a, b):
    return Fraction(sum(k * k for k in range(a, b + 1)), b - a + 1)


def signflip_limit_oracle(n, n0, rho):
    """Group rank moments of the limiting rank matrix under sign flipping.

    In a column with positive mean the benign values are positive and the
    malicious copies negative, so the benign nodes share ranks 1..n1 (each
    equally likely) and the malicious nodes share n1+1..n. A negative-mean
    column reverses the roles. Returned moments average over the positions a
    node can occupy, i.e. untied ranks for the malicious block.
    """
    rho = Fraction(rho).limit_denominator(10 ** 6)
    n1 = n - n0
    blocks_b = [(rho, range(1, n1 + 1)), (1 - rho, range(n0 + 1, n + 1))]
    blocks_m = [(rho, range(n1 + 1, n + 1)), (1 - rho, range(1, n0 + 1))]

    def moments(blocks):
        m1 = sum(w * Fraction(sum(ks), len(ks)) for w, ks in blocks)
        m2 = sum(w * Fraction(sum(k * k for k in ks), len(ks)) for w, ks in blocks)
        return m1, m2 - m1 * m1

    (mu_b, s2_b), (mu_m, s2_m) = moments(blocks_b), moments(blocks_m)
    # identical malicious rows tie: each column's block collapses to its mean
    tied_m2 = sum(w * Fraction(sum(ks), len(ks)) ** 2 for w, ks in blocks_m)
    return {"mu_b": mu_b, "mu_m": mu_m, "s2_b": s2_b, "s2_m": s2_m,
            "s2_m_tied": tied_m2 - mu_m * mu_m}
