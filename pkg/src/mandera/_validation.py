"""Input checks shared by the estimators and the functional API."""

import numpy as np
from sklearn.utils import check_array


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_finite(values, what="input"):
    values = np.asarray(values)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        if len(idx) == 1:
            idx = idx[0]
        raise ValidationError(f"non-finite value {values[idx]!r} in {what} at index {idx}")
    return values


def check_message_matrix(M, min_nodes=2):
    """Return ``M`` as a C-contiguous float64 (n, p) array after validation."""
    try:
        M = check_array(M, dtype=np.float64, order="C", ensure_all_finite=False,
                        ensure_min_samples=1, ensure_min_features=1)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if M.shape[0] < min_nodes:
        raise ValidationError(f"message matrix needs at least {min_nodes} rows, got {M.shape[0]}")
    check_finite(M, "message matrix")
    return M


def check_index_set(indices, n, name="index set"):
    idx = np.unique(np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                               dtype=np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValidationError(f"{name} contains indices outside [0, {n})")
    return idx


def as_seedseq(seed):
    """Accept an int, ``None`` or an existing ``SeedSequence``."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
