"""Node-local datasets: Gaussian class blobs and IDX (Fashion-MNIST) files."""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .._validation import ValidationError, as_seedseq

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class NodeDataset:
    X: np.ndarray
    y: np.ndarray

    @property
    def size(self):
        return len(self.y)


def _balanced_labels(count, n_classes, rng):
    y = np.arange(count) % n_classes
    rng.shuffle(y)
    return y


def generate_synthetic(n_classes, dim, per_node, n_nodes, seed=0, holdout=1000):
    """Gaussian blobs: class means ``3 * N(0, I)`` drawn once, unit covariance.

    ``per_node`` is an int or a length-``n_nodes`` sequence of sample counts.
    Returns ``(node_datasets, holdout_dataset)``.
    """
    if n_classes < 2 or dim < 1:
        raise ValidationError("need at least 2 classes and 1 feature")
    sizes = np.broadcast_to(np.asarray(per_node, dtype=np.int64), (n_nodes,))
    if np.any(sizes < 1):
        raise ValidationError("every node needs at least one sample")
    ss = as_seedseq(seed)
    mean_seed, hold_seed, *node_seeds = ss.spawn(n_nodes + 2)
    means = 3.0 * np.random.default_rng(mean_seed).standard_normal((n_classes, dim))

    def draw(count, s):
        rng = np.random.default_rng(s)
        y = _balanced_labels(count, n_classes, rng)
        return NodeDataset(means[y] + rng.standard_normal((count, dim)), y)

    nodes = [draw(int(sizes[i]), node_seeds[i]) for i in range(n_nodes)]
    return nodes, draw(holdout, hold_seed)


def _read_idx(path, magic, ndim):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read IDX file {path}: {exc}") from exc
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValidationError(f"{path}: truncated header ({len(raw)} of {header} bytes)")
    found = struct.unpack_from(">I", raw)[0]
    if found != magic:
        raise ValidationError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise ValidationError(f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair; features are scaled to [0, 1]."""
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValidationError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() > 9:
        raise ValidationError("labels must lie in 0..9")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return NodeDataset(X, labels.astype(np.int64))


def load_fashion_mnist(directory):
    """Return ``(train, test)`` from the standard Fashion-MNIST file names."""
    def pair(prefix):
        return (os.path.join(directory, f"{prefix}-images-idx3-ubyte"),
                os.path.join(directory, f"{prefix}-labels-idx1-ubyte"))

    return load_idx(*pair("train")), load_idx(*pair("t10k"))


def partition(dataset, n_nodes, seed=0, per_node=None):
    """Shuffle, then cut equal disjoint shards (or the first ``per_node`` each)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.size)
    size = dataset.size // n_nodes if per_node is None else int(per_node)
    if size < 1 or size * n_nodes > dataset.size:
        raise ValidationError(f"cannot cut {n_nodes} shards of {size} from {dataset.size} samples")
    return [NodeDataset(dataset.X[order[k * size:(k + 1) * size]],
                        dataset.y[order[k * size:(k + 1) * size]]) for k in range(n_nodes)]
