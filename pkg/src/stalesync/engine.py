"""Worker-side computation: models, mini-batch gradients, data shards.

Models expose full-batch `loss` and mean `gradient` over a batch; both
operate on flat float64 parameter vectors so the server can stay model
agnostic. Datasets are synthetic with a hidden ground truth, generated
deterministically from the experiment seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import (
    ExperimentConfig,
    GradientVector,
    WeightVector,
    WorkerId,
    rng_stream,
)

LOGIT_CLAMP = 30.0
MLP_HIDDEN = 8


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class MiniBatch:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


class QuadraticBowl:
    """f(w) = 0.5 ||w - c||^2; the gradient ignores the batch."""

    kind = "quadratic_bowl"

    def __init__(self, dimension: int, center: np.ndarray):
        self.param_dim = dimension
        self.center = np.asarray(center, dtype=np.float64)

    def loss(self, w: np.ndarray, features, labels) -> float:
        diff = w - self.center
        return 0.5 * float(diff @ diff)

    def gradient(self, w: np.ndarray, features, labels) -> np.ndarray:
        return w - self.center


class LinearRegression:
    """Mean squared error, 0.5 * (x.w - y)^2 per example."""

    kind = "linear_regression"

    def __init__(self, dimension: int):
        self.param_dim = dimension

    def loss(self, w, features, labels) -> float:
        residual = features @ w - labels
        return 0.5 * float(residual @ residual) / len(labels)

    def gradient(self, w, features, labels) -> np.ndarray:
        residual = features @ w - labels
        return features.T @ residual / len(labels)


class LogisticRegression:
    """Binary log-loss with logits clamped to +-LOGIT_CLAMP."""

    kind = "logistic_regression"

    def __init__(self, dimension: int):
        self.param_dim = dimension

    @staticmethod
    def _probabilities(w, features) -> np.ndarray:
        logits = np.clip(features @ w, -LOGIT_CLAMP, LOGIT_CLAMP)
        return 1.0 / (1.0 + np.exp(-logits))

    def loss(self, w, features, labels) -> float:
        p = self._probabilities(w, features)
        eps = 1e-12
        per_example = -(labels * np.log(p + eps) + (1.0 - labels) * np.log(1.0 - p + eps))
        return float(per_example.mean())

    def gradient(self, w, features, labels) -> np.ndarray:
        p = self._probabilities(w, features)
        return features.T @ (p - labels) / len(labels)


class TinyMLP:
    """One tanh hidden layer of MLP_HIDDEN units, squared error output.

    Parameters pack as [W1 (h*d), b1 (h), w2 (h), b2 (1)].
    """

    kind = "tiny_mlp"

    def __init__(self, dimension: int):
        self.input_dim = dimension
        self.hidden = MLP_HIDDEN
        self.param_dim = self.hidden * dimension + 2 * self.hidden + 1

    def _unpack(self, w: np.ndarray):
        d, h = self.input_dim, self.hidden
        w1 = w[: h * d].reshape(h, d)
        b1 = w[h * d: h * d + h]
        w2 = w[h * d + h: h * d + 2 * h]
        b2 = w[-1]
        return w1, b1, w2, b2

    def _forward(self, w, features):
        w1, b1, w2, b2 = self._unpack(w)
        hidden = np.tanh(features @ w1.T + b1)
        return hidden @ w2 + b2, hidden

    def predict(self, w, features) -> np.ndarray:
        return self._forward(w, features)[0]

    def loss(self, w, features, labels) -> float:
        out, _ = self._forward(w, features)
        diff = out - labels
        return 0.5 * float(diff @ diff) / len(labels)

    def gradient(self, w, features, labels) -> np.ndarray:
        w1, b1, w2, b2 = self._unpack(w)
        out, hidden = self._forward(w, features)
        m = len(labels)
        delta_out = (out - labels) / m
        grad_w2 = hidden.T @ delta_out
        grad_b2 = delta_out.sum()
        delta_hidden = np.outer(delta_out, w2) * (1.0 - hidden ** 2)
        grad_w1 = delta_hidden.T @ features
        grad_b1 = delta_hidden.sum(axis=0)
        return np.concatenate([grad_w1.ravel(), grad_b1, grad_w2, [grad_b2]])


_MODEL_CLASSES = {
    "quadratic_bowl": QuadraticBowl,
    "linear_regression": LinearRegression,
    "logistic_regression": LogisticRegression,
    "tiny_mlp": TinyMLP,
}


def make_model(model_kind: str, dimension: int, seed: int):
    if model_kind == "quadratic_bowl":
        center = rng_stream(seed, "model").normal(size=dimension)
        return QuadraticBowl(dimension, center)
    try:
        return _MODEL_CLASSES[model_kind](dimension)
    except KeyError:
        raise ValueError(f"unknown model kind {model_kind!r}")


def make_dataset(model_kind: str, n: int, dimension: int, seed: int,
                 noise: float = 0.0) -> Dataset:
    """Synthetic dataset with a hidden ground truth; same seed, same data."""
    rng = rng_stream(seed, "dataset")
    features = rng.normal(size=(n, dimension))
    if model_kind == "logistic_regression":
        truth = rng.normal(size=dimension)
        logits = features @ truth
        labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.float64)
    elif model_kind == "tiny_mlp":
        teacher = TinyMLP(dimension)
        truth = rng.normal(size=teacher.param_dim) * 0.7
        labels = teacher.predict(truth, features)
        if noise > 0:
            labels = labels + noise * rng.normal(size=n)
    else:
        # Linear ground truth; the bowl ignores the data entirely but gets
        # a well-formed dataset so sharding is uniform across kinds.
        truth = rng.normal(size=dimension)
        labels = features @ truth
        if noise > 0:
            labels = labels + noise * rng.normal(size=n)
    return Dataset(features, labels)


@dataclass
class DataShard:
    """One worker's slice of the dataset with a wrapping batch cursor."""

    owner: WorkerId
    features: np.ndarray
    labels: np.ndarray
    cursor: int = 0
    epochs_done: int = 0

    def __len__(self) -> int:
        return self.features.shape[0]

    def next_batch(self, m: int) -> MiniBatch:
        size = len(self)
        if size == 0:
            raise ValueError("shard is empty")
        if m > size:
            raise ValueError(f"batch size {m} exceeds shard size {size}")
        idx = (self.cursor + np.arange(m)) % size
        batch = MiniBatch(self.features[idx], self.labels[idx])
        if self.cursor + m >= size:
            self.epochs_done += 1
        self.cursor = (self.cursor + m) % size
        return batch


def next_batch(shard: DataShard, m: int) -> MiniBatch:
    return shard.next_batch(m)


def partition(dataset: Dataset, worker_count: int, seed: int) -> list[DataShard]:
    """Shuffle once, then split contiguously; shard sizes differ by <= 1."""
    order = rng_stream(seed, "shuffle").permutation(len(dataset))
    features = dataset.features[order]
    labels = dataset.labels[order]
    shards = []
    for worker, idx in enumerate(np.array_split(np.arange(len(dataset)), worker_count)):
        shards.append(DataShard(WorkerId(worker), features[idx], labels[idx]))
    return shards


def compute_gradient(model, w: WeightVector, batch: MiniBatch,
                     source: WorkerId = 0, source_iter: int = 0) -> GradientVector:
    """Mean gradient of the loss over the batch at w."""
    values = model.gradient(w.values, batch.features, batch.labels)
    return GradientVector(values, source=source, source_iter=source_iter)


def push_budget(config: ExperimentConfig) -> int:
    """Pushes each worker performs: enough batches to traverse its shard
    `epochs` times. Shards are equal sized after config normalization, so
    every worker gets the same budget and nobody can strand a barrier."""
    shard_size = config.dataset_size // config.worker_count
    return math.ceil(config.epochs * shard_size / config.batch_size)


@dataclass
class WorkerState:
    """One worker's local view between server interactions."""

    worker: WorkerId
    model: object
    shard: DataShard
    weights: WeightVector
    batch_size: int
    iterations: int = 0
    last_batch_loss: float = field(default=float("nan"))

    def begin_iteration(self) -> GradientVector:
        """Draw the next batch and compute the gradient at local weights.
        Also records the batch loss at those weights (the noisy-iterate
        loss the regret curve sums)."""
        batch = self.shard.next_batch(self.batch_size)
        self.last_batch_loss = self.model.loss(self.weights.values,
                                               batch.features, batch.labels)
        self.iterations += 1
        return compute_gradient(self.model, self.weights, batch,
                                source=self.worker, source_iter=self.iterations)

    def adopt(self, weights: WeightVector):
        self.weights = weights


def worker_step(state: WorkerState, server, now: float = 0.0):
    """One full iteration against a server: compute, push, and if granted
    immediately, pull and adopt. Returns the push decision; on a defer the
    caller waits for the release and finishes with handle_pull + adopt."""
    gradient = state.begin_iteration()
    decision = server.handle_push(gradient, now)
    if decision.granted:
        state.adopt(server.handle_pull(state.worker))
    return decision
