"""Federated training loop with attack injection and defended aggregation.

One epoch is one communication round: every node sends the average gradient
of a fresh mini-batch (drawn without replacement from its local data), or of
all its data in full-batch mode, the attack rewrites the message matrix, the
server aggregates and takes one momentum-SGD step.
"""

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .._validation import ValidationError, as_seedseq
from ..aggregation import AggregationRule, RuleKind, aggregate
from ..attacks import AttackKind, AttackSpec, apply_attack, apply_label_flip
from ..detect import mandera
from ..metrics import ConfusionCounts
from .data import generate_synthetic, load_fashion_mnist, partition
from .model import make_model


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FLConfig:
    n: int = 100
    n0: int = 0
    epochs: int = 25
    learning_rate: float = 0.01
    momentum: float = 0.5
    #: ``None`` means full-batch messages
    batch_size: int = 10
    node_sample_sizes: object = 500
    seed: int = 0
    model: object = "SoftmaxLinear"
    dataset: str = "SyntheticBlobs"
    n_classes: int = 10
    dim: int = 64
    data_path: str = None
    holdout: int = 1000
    detect: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("need at least 2 nodes")
        if not 0 <= self.n0 or not 2 * self.n0 < self.n:
            raise ValidationError(f"n0 must satisfy 0 <= n0 < n/2 (n={self.n}, n0={self.n0})")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1 or null")
        sizes = np.asarray(self.node_sample_sizes)
        if sizes.ndim > 1 or (sizes.ndim == 1 and sizes.size != self.n) or np.any(sizes < 1):
            raise ValidationError("node_sample_sizes must be >= 1 (scalar or one per node)")
        if self.dataset not in ("SyntheticBlobs", "FashionMNIST"):
            raise ValidationError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "FashionMNIST" and not self.data_path:
            raise ValidationError("FashionMNIST needs data_path")

    def sample_sizes(self):
        return np.broadcast_to(np.asarray(self.node_sample_sizes, dtype=np.int64), (self.n,))


def momentum_step(theta, velocity, grad, lr, momentum):
    """``u <- momentum * u + g``; ``theta <- theta - lr * u``."""
    velocity = momentum * velocity + grad
    return theta - lr * velocity, velocity


def matrix_digest(M):
    return hashlib.sha256(np.ascontiguousarray(M, dtype="<f8").tobytes()).hexdigest()


@dataclass
class EpochRecord:
    epoch: int
    digest: str
    accuracy: float
    loss: float
    grad_norm: float
    confusion: ConfusionCounts = None
    detection: dict = None
    #: (n, 2) detection features ``(e_i, s_i)`` when detection ran
    moments: np.ndarray = field(default=None, repr=False)
    matrix: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {"epoch": self.epoch, "digest": self.digest, "accuracy": self.accuracy,
                "loss": self.loss, "grad_norm": self.grad_norm,
                "confusion": None if self.confusion is None else asdict(self.confusion),
                "detection": self.detection}


@dataclass
class RunLog:
    malicious: list
    records: list

    @property
    def final_accuracy(self):
        return self.records[-1].accuracy

    def to_jsonl(self):
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "accuracy", "loss", "detected_tp", "detected_fp",
                    "detected_fn", "detected_tn"])
        for r in self.records:
            c = r.confusion
            w.writerow([r.epoch, repr(r.accuracy), repr(r.loss)]
                       + (["", "", "", ""] if c is None else [c.tp, c.fp, c.fn, c.tn]))
        return buf.getvalue()


def load_datasets(config, seed):
    if config.dataset == "SyntheticBlobs":
        return generate_synthetic(config.n_classes, config.dim, config.sample_sizes(), config.n,
                                  seed=seed, holdout=config.holdout)
    train, test = load_fashion_mnist(config.data_path)
    sizes = config.sample_sizes()
    if np.all(sizes == sizes[0]) and sizes[0] * config.n <= train.size:
        nodes = partition(train, config.n, seed=seed, per_node=int(sizes[0]))
    else:
        nodes = partition(train, config.n, seed=seed)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(test.size, size=min(config.holdout, test.size), replace=False))
    return nodes, type(test)(test.X[keep], test.y[keep])


def choose_malicious(n, n0, seed):
    rng = np.random.default_rng(seed)
    return tuple(int(i) for i in np.sort(rng.choice(n, size=n0, replace=False)))


def run_federated(config, attack=None, rule=None, keep_matrices=False):
    """Train for ``config.epochs`` rounds; return a :class:`RunLog`.

    If ``attack.malicious_set`` is empty, ``config.n0`` malicious nodes are
    drawn from the seed. Unset ``assumed_f``/``trim_beta`` default to ``n0``.
    """
    attack = attack or AttackSpec()
    rule = rule if isinstance(rule, AggregationRule) else AggregationRule(rule or "Mean")
    ss = as_seedseq(config.seed)
    data_seed, mal_seed, init_seed, attack_seed, node_root = ss.spawn(5)
    if attack.kind != AttackKind.NONE and not attack.malicious_set and config.n0:
        attack = attack.with_malicious(choose_malicious(config.n, config.n0, mal_seed))
    malicious = np.asarray(attack.malicious_set if attack.kind != AttackKind.NONE else (),
                           dtype=np.int64)
    truth = np.zeros(config.n, dtype=bool)
    truth[malicious] = True
    rule = rule.resolved(len(malicious))

    nodes, holdout = load_datasets(config, data_seed)
    dim = nodes[0].X.shape[1]
    if attack.kind == AttackKind.LABEL_FLIP:
        nodes = apply_label_flip(nodes, attack, config.n_classes)
    model = make_model(config.model, dim, config.n_classes)
    theta = model.init(np.random.default_rng(init_seed))
    velocity = np.zeros_like(theta)
    node_rngs = [np.random.default_rng(s) for s in node_root.spawn(config.n)]
    epoch_seeds = attack_seed.spawn(config.epochs)

    records = []
    M = np.empty((config.n, model.n_params))
    for epoch in range(config.epochs):
        for i, ds in enumerate(nodes):
            if config.batch_size is None or config.batch_size >= ds.size:
                X, y = ds.X, ds.y
            else:
                pick = node_rngs[i].choice(ds.size, size=config.batch_size, replace=False)
                X, y = ds.X[pick], ds.y[pick]
            M[i] = model.loss_grad(theta, X, y)[1]
        sent = apply_attack(M, attack, seed=epoch_seeds[epoch])
        detection = None
        if config.detect or rule.kind == RuleKind.MANDERA_THEN_MEAN:
            detection = mandera(sent)
        try:
            g = aggregate(sent, rule, detection)
        except ValidationError as exc:
            raise SimulationError(f"epoch {epoch}: aggregation failed: {exc}") from exc
        theta, velocity = momentum_step(theta, velocity, g, config.learning_rate, config.momentum)
        acc = float(np.mean(model.predict(theta, holdout.X) == holdout.y))
        records.append(EpochRecord(
            epoch=epoch, digest=matrix_digest(sent), accuracy=acc,
            loss=model.loss(theta, holdout.X, holdout.y), grad_norm=float(np.linalg.norm(g)),
            confusion=None if detection is None else ConfusionCounts.from_labels(detection.labels, truth),
            detection=None if detection is None else detection.to_dict(),
            moments=None if detection is None else detection.points,
            matrix=sent.copy() if keep_matrices else None))
    return RunLog([int(i) for i in malicious], records)


def train_centralized(config):
    """Pooled honest data, same optimizer; each step uses ``n * batch_size`` samples.

    Returns the holdout accuracy after every step.
    """
    ss = as_seedseq(config.seed)
    data_seed, _, init_seed, _, step_seed = ss.spawn(5)
    nodes, holdout = load_datasets(config, data_seed)
    X = np.concatenate([d.X for d in nodes])
    y = np.concatenate([d.y for d in nodes])
    model = make_model(config.model, X.shape[1], config.n_classes)
    theta = model.init(np.random.default_rng(init_seed))
    velocity = np.zeros_like(theta)
    rng = np.random.default_rng(step_seed)
    batch = None if config.batch_size is None else min(config.n * config.batch_size, len(y))
    accs = []
    for _ in range(config.epochs):
        if batch is None:
            g = model.loss_grad(theta, X, y)[1]
        else:
            pick = rng.choice(len(y), size=batch, replace=False)
            g = model.loss_grad(theta, X[pick], y[pick])[1]
        theta, velocity = momentum_step(theta, velocity, g, config.learning_rate, config.momentum)
        accs.append(float(np.mean(model.predict(theta, holdout.X) == holdout.y)))
    return accs
