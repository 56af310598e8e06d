"""Small differentiable classifiers over a flat parameter vector.

Both models expose ``init``, ``loss_grad`` (mean cross-entropy and its
gradient) and ``predict``. Layout: each tensor flattened row-major, concatenated
in the order listed by ``shapes``.
"""

import numpy as np

from .._validation import ValidationError


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _ce_and_dlogits(logits, y):
    if len(y) == 0:
        raise ValidationError("empty batch")
    logp = _log_softmax(logits)
    N = len(y)
    loss = -logp[np.arange(N), y].mean()
    d = np.exp(logp)
    d[np.arange(N), y] -= 1.0
    return loss, d / N


class _FlatModel:
    shapes = ()

    @property
    def n_params(self):
        return int(sum(np.prod(s) for s in self.shapes))

    def unflatten(self, theta):
        out, at = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(theta[at:at + size].reshape(s))
            at += size
        return out

    def predict(self, theta, X):
        return np.argmax(self.logits(theta, X), axis=1)

    def loss(self, theta, X, y):
        return float(_ce_and_dlogits(self.logits(theta, X), y)[0])


class SoftmaxLinear(_FlatModel):
    """Multinomial logistic regression; ``p = d*K + K``."""

    def __init__(self, dim, n_classes):
        self.dim, self.n_classes = dim, n_classes
        self.shapes = ((n_classes, dim), (n_classes,))

    def init(self, rng):
        return np.zeros(self.n_params)

    def logits(self, theta, X):
        W, b = self.unflatten(theta)
        return X @ W.T + b

    def loss_grad(self, theta, X, y):
        W, b = self.unflatten(theta)
        loss, d = _ce_and_dlogits(X @ W.T + b, y)
        return float(loss), np.concatenate([(d.T @ X).ravel(), d.sum(axis=0)])


class MLP(_FlatModel):
    """One ReLU hidden layer of width ``hidden``."""

    def __init__(self, dim, n_classes, hidden=32):
        self.dim, self.n_classes, self.hidden = dim, n_classes, hidden
        self.shapes = ((hidden, dim), (hidden,), (n_classes, hidden), (n_classes,))

    def init(self, rng):
        W1 = rng.standard_normal((self.hidden, self.dim)) * np.sqrt(2.0 / self.dim)
        W2 = rng.standard_normal((self.n_classes, self.hidden)) * np.sqrt(1.0 / self.hidden)
        return np.concatenate([W1.ravel(), np.zeros(self.hidden), W2.ravel(),
                               np.zeros(self.n_classes)])

    def logits(self, theta, X):
        W1, b1, W2, b2 = self.unflatten(theta)
        return np.maximum(X @ W1.T + b1, 0.0) @ W2.T + b2

    def loss_grad(self, theta, X, y):
        W1, b1, W2, b2 = self.unflatten(theta)
        pre = X @ W1.T + b1
        H = np.maximum(pre, 0.0)
        loss, d = _ce_and_dlogits(H @ W2.T + b2, y)
        dH = (d @ W2) * (pre > 0)
        return float(loss), np.concatenate([(dH.T @ X).ravel(), dH.sum(axis=0),
                                            (d.T @ H).ravel(), d.sum(axis=0)])


def make_model(spec, dim, n_classes):
    """``spec`` is ``"SoftmaxLinear"`` or ``{"MLP": hidden_width}`` / ``"MLP"``."""
    if spec == "SoftmaxLinear":
        return SoftmaxLinear(dim, n_classes)
    if spec == "MLP":
        return MLP(dim, n_classes)
    if isinstance(spec, dict) and set(spec) == {"MLP"}:
        return MLP(dim, n_classes, int(spec["MLP"]))
    raise ValidationError(f"unknown model {spec!r}")
