"""Losses, the Adam optimizer, training loops and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .layers import NetworkGraph
from .tensor import DTYPE, NonFiniteError, ShapeError

PROB_EPS = 1e-7


@dataclass
class Dataset:
    """Images ``(N, C, H, W)`` scaled to [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    classes: list[str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ShapeError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.classes)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    loss: str = "bce"  # bce, cce or triplet
    margin: float = 0.2
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.loss not in ("bce", "cce", "triplet"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "triplet" and self.margin <= 0:
            raise ValueError("triplet margin must be > 0")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float
    f1: float

    def row(self) -> str:
        return "\t".join([str(self.epoch)] + [f"{v:.6f}" for v in
                         (self.train_loss, self.val_loss, self.train_acc, self.val_acc, self.f1)])


# -- losses -----------------------------------------------------------------

def bce_loss(p, y):
    """Binary cross-entropy on probability ``p`` of the positive class.

    Works elementwise on arrays. Returns ``(loss, dloss_dp)``.
    """
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binary labels must be 0 or 1")
    p = np.clip(np.asarray(p, dtype=DTYPE), PROB_EPS, 1.0 - PROB_EPS)
    loss = -(y * np.log(p) + (1 - y) * np.log(1.0 - p))
    grad = -y / p + (1 - y) / (1.0 - p)
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


def cce_loss(probs, labels):
    """Categorical cross-entropy for rows of ``probs``. Returns per-row loss
    and the gradient w.r.t. ``probs``."""
    probs = np.asarray(probs, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    rows = np.arange(len(labels))
    p = np.clip(probs[rows, labels], PROB_EPS, 1.0)
    grad = np.zeros_like(probs)
    grad[rows, labels] = -1.0 / p
    return -np.log(p), grad


def triplet_loss(anchor, positive, negative, margin=0.2):
    """``max(0, |a-p|^2 - |a-n|^2 + margin)``.

    Returns ``(loss, grad_a, grad_p, grad_n)``; gradients vanish when the
    hinge is inactive.
    """
    a = np.asarray(anchor, dtype=DTYPE)
    p = np.asarray(positive, dtype=DTYPE)
    n = np.asarray(negative, dtype=DTYPE)
    if not a.shape == p.shape == n.shape:
        raise ShapeError(f"embedding dimensions differ: {a.shape}, {p.shape}, {n.shape}")
    if margin <= 0:
        raise ValueError("margin must be > 0")
    d_ap = np.sum((a - p) ** 2)
    d_an = np.sum((a - n) ** 2)
    loss = d_ap - d_an + margin
    if loss <= 0:
        z = np.zeros_like(a)
        return 0.0, z, z.copy(), z.copy()
    return float(loss), 2 * (n - p), -2 * (a - p), 2 * (a - n)


def batch_hard_triplet(emb: np.ndarray, labels: np.ndarray, margin=0.2):
    """Batch-hard mining: for each anchor, its farthest positive and nearest
    negative within the batch. Anchors lacking either are skipped.

    Returns ``(mean_loss, grad_emb, n_anchors)``.
    """
    emb = np.asarray(emb, dtype=DTYPE)
    labels = np.asarray(labels)
    sq = np.sum(emb ** 2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * emb @ emb.T, 0.0)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    diff = labels[:, None] != labels[None, :]

    grad = np.zeros_like(emb)
    total = 0.0
    count = 0
    for i in range(len(emb)):
        if not same[i].any() or not diff[i].any():
            continue
        pos = int(np.argmax(np.where(same[i], d2[i], -np.inf)))
        neg = int(np.argmin(np.where(diff[i], d2[i], np.inf)))
        loss, ga, gp, gn = triplet_loss(emb[i], emb[pos], emb[neg], margin)
        total += loss
        grad[i] += ga
        grad[pos] += gp
        grad[neg] += gn
        count += 1
    if count == 0:
        return 0.0, grad, 0
    return total / count, grad / count, count


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Iterable[np.ndarray], **kwargs) -> "AdamState":
        params = list(params)
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not len(params) == len(grads) == len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# -- metrics ----------------------------------------------------------------

def f1_score(pred, true, num_classes: int) -> float:
    """Positive-class F1 for two classes, macro F1 otherwise."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    classes = [1] if num_classes == 2 else range(num_classes)
    scores = []
    for c in classes:
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        scores.append(f1_from_counts(tp, fp, fn))
    return float(np.mean(scores))


def f1_from_counts(tp, fp, fn) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def _head_loss(net: NetworkGraph, out: np.ndarray, labels: np.ndarray, loss: str, margin: float):
    """Mean loss over the batch and its gradient w.r.t. the network output."""
    n = len(labels)
    if loss == "bce":
        l, dp = bce_loss(out[:, 1], labels)
        grad = np.zeros_like(out)
        grad[:, 1] = dp / n
        return float(l.mean()), grad
    if loss == "cce":
        l, g = cce_loss(out, labels)
        return float(l.mean()), g / n
    mean, grad, _ = batch_hard_triplet(out, labels, margin)
    return mean, grad


def check_compatible(net: NetworkGraph, loss: str):
    if loss == "triplet" and not net.is_embedding:
        raise ValueError("triplet loss needs an embedding (l2norm) head")
    if loss in ("bce", "cce") and not net.is_classifier:
        raise ValueError(f"{loss} loss needs a softmax head")
    if loss == "bce" and net.output_shape != (2,):
        raise ValueError("binary cross-entropy needs exactly two output classes")


def _nearest_neighbour_labels(emb: np.ndarray, labels: np.ndarray) -> np.ndarray:
    d2 = np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return labels[np.argmin(d2, axis=1)]


def evaluate(net: NetworkGraph, data: Dataset, loss: str | None = None, margin: float = 0.2,
             batch_size: int = 256):
    """Return ``(accuracy, f1, mean_loss)`` in eval mode.

    Classifiers are scored by argmax. Embedding nets are scored by
    leave-one-out nearest-neighbour identity within ``data``.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if loss is None:
        loss = "triplet" if net.is_embedding else ("bce" if net.output_shape == (2,) else "cce")
    check_compatible(net, loss)
    out = np.concatenate([net.forward(data.images[i:i + batch_size], mode="eval")[0]
                          for i in range(0, len(data), batch_size)])
    if net.is_embedding:
        mean_loss, _, _ = batch_hard_triplet(out, data.labels, margin)
        pred = _nearest_neighbour_labels(out, data.labels)
    else:
        mean_loss, _ = _head_loss(net, out, data.labels, loss, margin)
        pred = np.argmax(out, axis=1)
    acc = float(np.mean(pred == data.labels))
    return acc, f1_score(pred, data.labels, len(data.classes)), float(mean_loss)


def train_epoch(net: NetworkGraph, data: Dataset, config: TrainConfig, adam: AdamState,
                epoch: int = 0, val: Dataset | None = None) -> EpochMetrics:
    """One seeded-shuffled pass of mini-batch Adam updates."""
    if len(data) == 0:
        raise ValueError("training dataset is empty")
    check_compatible(net, config.loss)
    adam.learning_rate = config.learning_rate
    order = np.random.default_rng([config.seed, epoch]).permutation(len(data))
    params = net.parameters()
    net.train()
    for b, start in enumerate(range(0, len(data), config.batch_size)):
        idx = order[start:start + config.batch_size]
        out, caches = net.forward(data.images[idx], seed=[config.seed, epoch, b], mode="train")
        _, grad = _head_loss(net, out, data.labels[idx], config.loss, config.margin)
        _, grads = net.backward(caches, grad)
        adam_step(adam, params, grads)
    net.eval()

    train_acc, train_f1, train_loss = evaluate(net, data, config.loss, config.margin)
    if val is not None and len(val):
        val_acc, f1, val_loss = evaluate(net, val, config.loss, config.margin)
    else:
        val_acc, f1, val_loss = train_acc, train_f1, train_loss
    return EpochMetrics(epoch + 1, train_loss, val_loss, train_acc, val_acc, f1)


def fit(net: NetworkGraph, data: Dataset, config: TrainConfig, val: Dataset | None = None,
        metrics_path=None) -> list[EpochMetrics]:
    """Train for ``config.epochs`` epochs; optionally write the metrics file."""
    adam = AdamState.for_params(net.parameters(), learning_rate=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        history.append(train_epoch(net, data, config, adam, epoch, val))
    if metrics_path is not None:
        write_metrics(history, metrics_path)
    return history


def write_metrics(history: list[EpochMetrics], path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for m in history:
            fh.write(m.row() + "\n")


def read_metrics(path) -> list[EpochMetrics]:
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                f = line.split("\t")
                rows.append(EpochMetrics(int(f[0]), *(float(v) for v in f[1:6])))
    return rows


def smoothed(values, window: int = 2) -> np.ndarray:
    """Trailing moving average."""
    values = np.asarray(values, dtype=DTYPE)
    if len(values) < window:
        return values
    return np.convolve(values, np.ones(window) / window, mode="valid")
