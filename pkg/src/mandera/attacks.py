"""Byzantine attacks on a completed honest message matrix, plus label flipping.

GA, SF and ZG replace the rows of the malicious nodes using the benign mean of
the current epoch. LF acts on node-local training data instead.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from ._validation import ValidationError, check_index_set, check_message_matrix


class AttackKind(str, Enum):
    NONE = "None"
    GAUSSIAN = "Gaussian"
    SIGN_FLIP = "SignFlip"
    ZERO_GRADIENT = "ZeroGradient"
    LABEL_FLIP = "LabelFlip"


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.NONE
    malicious_set: tuple = ()
    gaussian_variance: float = 30.0
    ratio_r: float = 3.0
    label_map: tuple = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        mal = tuple(sorted({int(i) for i in self.malicious_set}))
        if mal and mal[0] < 0:
            raise ValidationError("malicious_set indices must be non-negative")
        object.__setattr__(self, "malicious_set", mal)
        if not self.gaussian_variance > 0:
            raise ValidationError("gaussian_variance must be > 0")
        if not self.ratio_r > 0:
            raise ValidationError("ratio_r must be > 0")
        if self.label_map is not None:
            object.__setattr__(self, "label_map", tuple(int(y) for y in self.label_map))

    def with_malicious(self, malicious_set):
        return replace(self, malicious_set=tuple(malicious_set))


def _split(M, malicious):
    n = M.shape[0]
    mal = check_index_set(malicious, n, "malicious_set")
    benign = np.setdiff1d(np.arange(n), mal)
    return mal, benign


def benign_mean(M, benign_set):
    """Per-column mean over the rows in ``benign_set``."""
    M = check_message_matrix(M, min_nodes=1)
    idx = check_index_set(benign_set, M.shape[0], "benign_set")
    if idx.size == 0:
        raise ValidationError("benign set is empty")
    return M[idx].mean(axis=0)


def gaussian_attack(M, malicious, variance, seed=0):
    """Malicious rows drawn from N(m_b, variance * I).

    ``variance`` is a scalar or a length-p vector of per-dimension variances;
    zero entries give rows equal to the benign mean.
    """
    M = check_message_matrix(M, min_nodes=1)
    mal, benign = _split(M, malicious)
    out = M.copy()
    if mal.size == 0:
        return out
    mb = benign_mean(M, benign)
    sd = np.sqrt(np.broadcast_to(np.asarray(variance, dtype=np.float64), mb.shape))
    if np.any(sd < 0) or not np.all(np.isfinite(sd)):
        raise ValidationError("variance must be finite and non-negative")
    rng = np.random.default_rng(seed)
    out[mal] = mb + rng.standard_normal((mal.size, M.shape[1])) * sd
    return out


def sign_flip_attack(M, malicious, r):
    """Every malicious row becomes ``-r * m_b``."""
    if not r > 0:
        raise ValidationError("ratio r must be > 0")
    M = check_message_matrix(M, min_nodes=1)
    mal, benign = _split(M, malicious)
    out = M.copy()
    if mal.size:
        out[mal] = -r * benign_mean(M, benign)
    return out


def zero_gradient_attack(M, malicious):
    """Sign flip with ``r = n1 / n0`` so that the column sums vanish."""
    M = np.asarray(M)
    mal = check_index_set(malicious, M.shape[0], "malicious_set")
    if mal.size == 0:
        raise ValidationError("zero-gradient attack needs at least one malicious node")
    n1 = M.shape[0] - mal.size
    return sign_flip_attack(M, mal, n1 / mal.size)


def apply_gaussian(M, spec):
    return gaussian_attack(M, spec.malicious_set, spec.gaussian_variance, spec.seed)


def apply_sign_flip(M, spec):
    return sign_flip_attack(M, spec.malicious_set, spec.ratio_r)


def apply_zero_gradient(M, spec):
    return zero_gradient_attack(M, spec.malicious_set)


def apply_attack(M, spec, seed=None):
    """Dispatch a message-level attack. LF and None return ``M`` unchanged.

    ``seed`` overrides ``spec.seed`` for GA (used to vary draws across epochs).
    """
    kind = spec.kind
    if kind == AttackKind.GAUSSIAN:
        return gaussian_attack(M, spec.malicious_set, spec.gaussian_variance,
                               spec.seed if seed is None else seed)
    if kind == AttackKind.SIGN_FLIP:
        return apply_sign_flip(M, spec)
    if kind == AttackKind.ZERO_GRADIENT:
        return apply_zero_gradient(M, spec)
    return check_message_matrix(M, min_nodes=1).copy()


def default_label_map(n_classes):
    """``y -> K - 1 - y``; an involution."""
    return tuple(range(n_classes - 1, -1, -1))


def check_label_map(label_map, n_classes):
    lm = np.asarray(label_map, dtype=np.int64)
    if lm.shape != (n_classes,) or not np.array_equal(np.sort(lm), np.arange(n_classes)):
        raise ValidationError(f"label_map must be a permutation of 0..{n_classes - 1}")
    return lm


def flip_labels(y, label_map):
    return np.asarray(label_map, dtype=np.int64)[np.asarray(y, dtype=np.int64)]


def apply_label_flip(datasets, spec, n_classes):
    """Return a new list of node datasets with malicious nodes' labels remapped.

    ``datasets`` is a sequence of dataclasses with ``X`` and ``y`` fields.
    """
    lm = check_label_map(spec.label_map if spec.label_map is not None
                         else default_label_map(n_classes), n_classes)
    mal = set(check_index_set(spec.malicious_set, len(datasets), "malicious_set").tolist())
    out = []
    for i, ds in enumerate(datasets):
        out.append(replace(ds, y=flip_labels(ds.y, lm)) if i in mal else ds)
    return out
