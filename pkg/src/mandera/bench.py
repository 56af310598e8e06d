"""Wall-clock timing of defenses on one fixed message matrix.

Detection-type defenses are timed without the final averaging step. Krum is
timed as its selection, Bulyan as selection plus the coordinate-wise phase.
"""

import csv
import io
import time
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import ValidationError, check_message_matrix
from .aggregation import bulyan, coordinate_median, krum_select, trimmed_mean
from .detect import mandera

DEFAULT_RULES = ("Mandera", "Krum", "Bulyan", "TrimmedMean", "Median")


@dataclass
class BenchRow:
    rule: str
    mean_ms: float
    sd_ms: float
    repeats: int
    n: int
    p: int
    #: f or trim count used; ``None`` for rules without one
    assumed_f: int


def bulyan_max_f(n):
    """Largest ``f`` satisfying ``n >= 4f + 3``."""
    return max((n - 3) // 4, 0)


def _defense(rule, f, trim):
    if rule == "Mandera":
        return mandera
    if rule == "Krum":
        return lambda M: krum_select(M, f)
    if rule == "Bulyan":
        return lambda M: bulyan(M, f)
    if rule == "TrimmedMean":
        return lambda M: trimmed_mean(M, trim)
    if rule == "Median":
        return coordinate_median
    raise ValidationError(f"unknown bench rule {rule!r}; choose from {', '.join(DEFAULT_RULES)}")


def bench_defenses(M, rules=DEFAULT_RULES, repeats=100, n0=30):
    """Mean and SD (ms) of each defense over ``repeats`` runs on the same ``M``.

    Krum and the trimmed mean assume ``f = n0``. Bulyan uses ``f = n0`` clipped
    to its precondition ``n >= 4f + 3``.
    """
    M = check_message_matrix(M, min_nodes=2)
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    n, p = M.shape
    if not 0 <= n0 < n:
        raise ValidationError("need 0 <= n0 < n")
    rows = []
    for rule in rules:
        f = min(n0, bulyan_max_f(n)) if rule == "Bulyan" else n0
        trim = min(n0, (n - 1) // 2)
        fn = _defense(rule, f, trim)
        times = np.empty(repeats)
        for k in range(repeats):
            t0 = time.perf_counter()
            fn(M)
            times[k] = (time.perf_counter() - t0) * 1e3
        sd = float(times.std(ddof=1)) if repeats > 1 else 0.0
        used_f = {"TrimmedMean": trim, "Krum": f, "Bulyan": f}.get(rule)
        rows.append(BenchRow(rule, float(times.mean()), sd, repeats, n, p, used_f))
    return rows


def bench_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rule", "mean_ms", "sd_ms", "repeats", "n", "p", "assumed_f"])
    for r in rows:
        w.writerow([r.rule, f"{r.mean_ms:.3f}", f"{r.sd_ms:.3f}", r.repeats, r.n, r.p,
                    "" if r.assumed_f is None else r.assumed_f])
    return buf.getvalue()


def bench_dicts(rows):
    return [asdict(r) for r in rows]
