"""Mini-batch training and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Dataset
from .model import VisionTransformer
from .optim import Optimizer

log = logging.getLogger(__name__)


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_accuracy: float
    accuracy: float

    def as_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "train_accuracy": self.train_accuracy,
            "accuracy": self.accuracy,
        }


def _check_labels(dataset: Dataset, num_classes: int) -> None:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.labels.min() < 0 or dataset.labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")


def train_step(model: VisionTransformer, images: np.ndarray, labels: np.ndarray, opt: Optimizer, rng=None) -> tuple[float, int]:
    """One optimizer step on a batch; returns the loss and the number of correct predictions."""
    if len(labels) == 0:
        raise ValueError("empty batch")
    logits, _ = model(images, rng if model.cfg.dropout > 0 else None)
    loss = T.cross_entropy(logits, labels)
    opt.zero_grad()
    loss.backward()
    opt.step()
    correct = int((logits.data.argmax(axis=1) == labels).sum())
    return loss.item(), correct


def train_epoch(
    model: VisionTransformer,
    dataset: Dataset,
    opt: Optimizer,
    batch_size: int = 64,
    rng: np.random.Generator | None = None,
    schedule=None,
) -> tuple[float, float]:
    """One shuffled pass over ``dataset``; returns ``(mean loss, accuracy)``.

    ``schedule`` is an optional callable ``step_count -> learning rate``
    applied before every step.
    """
    _check_labels(dataset, model.cfg.num_classes)
    rng = rng if rng is not None else np.random.default_rng(0)
    order = rng.permutation(len(dataset))
    total_loss = 0.0
    correct = 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if schedule is not None:
            opt.lr = schedule(opt.step_count)
        loss, hits = train_step(model, dataset.images[idx], dataset.labels[idx], opt, rng)
        total_loss += loss * len(idx)
        correct += hits
    return total_loss / len(dataset), correct / len(dataset)


def evaluate(model: VisionTransformer, dataset: Dataset, batch_size: int = 256) -> float:
    _check_labels(dataset, model.cfg.num_classes)
    logits = model.predict(dataset.images, batch_size)
    return float((logits.argmax(axis=1) == dataset.labels).mean())


def cosine_schedule(base_lr: float, total_steps: int, warmup_steps: int = 0, min_lr: float = 0.0):
    """Linear warmup then cosine decay to ``min_lr``."""

    def lr_at(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return base_lr * (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        progress = min(1.0, (step - warmup_steps) / span)
        return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + np.cos(np.pi * progress))

    return lr_at


def fit(
    model: VisionTransformer,
    train: Dataset,
    opt: Optimizer,
    epochs: int,
    batch_size: int = 64,
    seed: int = 0,
    eval_set: Dataset | None = None,
    warmup_epochs: int = 0,
    callback=None,
) -> list[EpochMetrics]:
    """Train for ``epochs`` with a cosine schedule; evaluate after every epoch.

    ``accuracy`` in each record is measured on ``eval_set`` (the training set
    when none is given).
    """
    rng = np.random.default_rng(seed)
    steps_per_epoch = -(-len(train) // batch_size)
    schedule = cosine_schedule(opt.lr, epochs * steps_per_epoch, warmup_epochs * steps_per_epoch)
    history = []
    for epoch in range(1, epochs + 1):
        loss, train_acc = train_epoch(model, train, opt, batch_size, rng, schedule)
        acc = evaluate(model, eval_set if eval_set is not None else train)
        metrics = EpochMetrics(epoch, loss, train_acc, acc)
        log.info("epoch %d loss %.4f train_acc %.4f acc %.4f", epoch, loss, train_acc, acc)
        history.append(metrics)
        if callback is not None:
            callback(metrics)
    return history
