"""Flat-vector models, local (proximal) SGD and weighted federated evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .aggregation import ModelParams
from .data import DatasetPartition
from .errors import DivergenceError, EvaluationError

__all__ = [
    "TrainConfig",
    "SoftmaxRegression",
    "MLP",
    "regularized_loss",
    "local_train",
    "evaluate_weighted",
    "SGDClassifier",
]


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 2
    batch_size: int = 16
    learning_rate: float = 0.1
    prox_mu: float = 0.0

    def __post_init__(self):
        if self.local_epochs < 0:
            raise ValueError("local_epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.prox_mu < 0:
            raise ValueError("prox_mu must be non-negative")


def _softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.mean(z[np.arange(n), y] - np.log(expz.sum(axis=1))))
    p[np.arange(n), y] -= 1.0
    return loss, p / n


class SoftmaxRegression:
    """Multinomial logistic regression; layout ``[W (d x C) row-major, b (C)]``."""

    def __init__(self, n_features: int, n_classes: int):
        self.n_features = n_features
        self.n_classes = n_classes

    @property
    def n_params(self) -> int:
        return (self.n_features + 1) * self.n_classes

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        return np.zeros(self.n_params)

    def _unpack(self, w):
        d, c = self.n_features, self.n_classes
        return w[: d * c].reshape(d, c), w[d * c :]

    def logits(self, w: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self._unpack(w)
        return X @ W + b

    def loss_and_grad(self, w, X, y) -> tuple[float, np.ndarray]:
        loss, g = _softmax_xent(self.logits(w, X), y)
        return loss, np.concatenate([(X.T @ g).ravel(), g.sum(axis=0)])

    def predict(self, w, X) -> np.ndarray:
        return self.logits(w, X).argmax(axis=1)


class MLP:
    """One tanh hidden layer; layout ``[W1, b1, W2, b2]`` flattened row-major."""

    def __init__(self, n_features: int, n_classes: int, hidden: int = 16):
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden = hidden

    @property
    def n_params(self) -> int:
        d, h, c = self.n_features, self.hidden, self.n_classes
        return d * h + h + h * c + c

    def init(self, rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        d, h, c = self.n_features, self.hidden, self.n_classes
        W1 = rng.normal(scale=1.0 / np.sqrt(d), size=(d, h))
        W2 = rng.normal(scale=1.0 / np.sqrt(h), size=(h, c))
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(c)])

    def _unpack(self, w):
        d, h, c = self.n_features, self.hidden, self.n_classes
        i = 0
        W1 = w[i : i + d * h].reshape(d, h); i += d * h
        b1 = w[i : i + h]; i += h
        W2 = w[i : i + h * c].reshape(h, c); i += h * c
        b2 = w[i : i + c]
        return W1, b1, W2, b2

    def logits(self, w, X):
        W1, b1, W2, b2 = self._unpack(w)
        return np.tanh(X @ W1 + b1) @ W2 + b2

    def loss_and_grad(self, w, X, y):
        W1, b1, W2, b2 = self._unpack(w)
        a = np.tanh(X @ W1 + b1)
        loss, g = _softmax_xent(a @ W2 + b2, y)
        da = (g @ W2.T) * (1.0 - a**2)
        return loss, np.concatenate(
            [(X.T @ da).ravel(), da.sum(axis=0), (a.T @ g).ravel(), g.sum(axis=0)]
        )

    def predict(self, w, X):
        return self.logits(w, X).argmax(axis=1)


def regularized_loss(model, w, X, y, anchor=None, mu: float = 0.0) -> tuple[float, np.ndarray]:
    """Cross-entropy plus ``mu/2 * ||w - anchor||^2`` and its gradient."""
    loss, grad = model.loss_and_grad(w, X, y)
    if mu:
        diff = w - anchor
        loss += 0.5 * mu * float(diff @ diff)
        grad = grad + mu * diff
    return loss, grad


def _default_model(global_: ModelParams, partition: DatasetPartition):
    d = partition.X_train.shape[1]
    c, rem = divmod(len(global_.weights), d + 1)
    if rem:
        raise ValueError("cannot infer a softmax layout; pass model=")
    return SoftmaxRegression(d, c)


def local_train(
    global_: ModelParams,
    partition: DatasetPartition,
    config: TrainConfig,
    rng: np.random.Generator,
    *,
    model=None,
    epochs: int | None = None,
) -> tuple[ModelParams, int]:
    """Minibatch SGD on one client, starting from the global model.

    Batches are reshuffled every epoch from ``rng``. With ``prox_mu > 0`` the
    FedProx proximal term anchored at the global weights is added. The
    returned params keep the global model's version round. ``epochs``
    overrides ``config.local_epochs`` for partial work.
    """
    model = model or _default_model(global_, partition)
    anchor = global_.weights
    if anchor.shape != (model.n_params,):
        raise ValueError(f"expected {model.n_params} weights, got {anchor.shape}")
    X, y = partition.X_train, partition.y_train
    n = len(y)
    bs = min(config.batch_size, n)
    w = anchor.copy()
    for _ in range(config.local_epochs if epochs is None else epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start : start + bs]
            # overflow is reported as DivergenceError below, not as a warning
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = regularized_loss(model, w, X[idx], y[idx], anchor, config.prox_mu)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(f"non-finite loss on client {partition.client_id!r}")
            w = w - config.learning_rate * grad
    return ModelParams(w, global_.version_round), n


def evaluate_weighted(
    global_: ModelParams,
    partitions: Sequence[DatasetPartition],
    sample: int,
    rng: np.random.Generator,
    *,
    model=None,
) -> float:
    """Accuracy over a random subset of clients, weighted by test-set size."""
    if not 1 <= sample <= len(partitions):
        raise ValueError(f"sample must be in 1..{len(partitions)}, got {sample}")
    if sample == len(partitions):
        chosen = list(partitions)
    else:
        chosen = [partitions[i] for i in sorted(rng.choice(len(partitions), sample, replace=False))]
    total = sum(p.n_test for p in chosen)
    if total == 0:
        raise EvaluationError("chosen clients have empty test sets")
    model = model or _default_model(global_, chosen[0])
    acc = 0.0
    for p in chosen:
        if p.n_test:
            acc_k = float(np.mean(model.predict(global_.weights, p.X_test) == p.y_test))
            acc += acc_k * p.n_test / total
    return acc


class SGDClassifier(ClassifierMixin, BaseEstimator):
    """Centralized estimator over the same kernels, for pipelines and baselines.

    Fits :class:`SoftmaxRegression` (``hidden=0``) or :class:`MLP` with the
    minibatch SGD used by clients, optionally pulled toward ``anchor``.
    """

    def __init__(self, hidden=0, epochs=5, batch_size=16, learning_rate=0.1,
                 prox_mu=0.0, anchor=None, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.prox_mu = prox_mu
        self.anchor = anchor
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        y_idx = np.searchsorted(self.classes_, y)
        d, c = X.shape[1], len(self.classes_)
        self.model_ = MLP(d, c, self.hidden) if self.hidden else SoftmaxRegression(d, c)
        rng = np.random.default_rng(self.random_state)
        start = self.model_.init(rng) if self.anchor is None else np.asarray(self.anchor, float)
        part = DatasetPartition(None, X, y_idx, X[:0], y_idx[:0])
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.prox_mu)
        params, _ = local_train(ModelParams(start), part, cfg, rng, model=self.model_)
        self.coef_ = params.weights
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return self.classes_[self.model_.predict(self.coef_, X)]
