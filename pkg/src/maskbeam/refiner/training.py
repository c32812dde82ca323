"""Mini-batch training loop with early stopping on validation cross-entropy."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .network import forward, gradients, loss
from .optimizer import OptimizerState, nadam_step


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingBatch:
    """One training sample: inputs and the mask target, all (F, T)."""

    features: np.ndarray
    logit_mask: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        shapes = {self.features.shape, self.logit_mask.shape, self.target.shape}
        if len(shapes) != 1:
            raise ValueError(f"features/logit_mask/target shapes differ: {shapes}")


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 5
    batch_size: int = 8
    seed: int = 0
    shuffle: bool = True


@dataclass
class TrainResult:
    params: object
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_bce
    best_epoch: int = -1
    best_val_bce: float = float("inf")
    optimizer_state: OptimizerState = None


def _stack(samples):
    return (
        np.stack([s.features for s in samples]),
        np.stack([s.logit_mask for s in samples]),
        np.stack([s.target for s in samples]),
    )


def _minibatches(samples, batch_size, order):
    """Group equally shaped samples into stacks of at most batch_size."""
    by_shape = defaultdict(list)
    for idx in order:
        by_shape[samples[idx].features.shape].append(samples[idx])
    for group in by_shape.values():
        for start in range(0, len(group), batch_size):
            yield _stack(group[start : start + batch_size])


def validation_bce(samples, params):
    """Mean BCE of deterministic predictions over a sample set (no L2 term)."""
    total, bins = 0.0, 0
    l2_free = replace(params, l2_coefficient=0.0)
    for sample in samples:
        pred = forward(sample.features, sample.logit_mask, params, mode="infer")
        total += loss(pred, sample.target, l2_free) * pred.size
        bins += pred.size
    return total / bins


def train(train_set, val_set, params, config: TrainConfig = None,
          initial_state=None, initial_history=None) -> TrainResult:
    """Train until the validation BCE stops improving.

    Keeps the parameters of the best validation epoch. A non-finite training
    loss aborts with TrainingDiverged. Passing initial_state/initial_history
    resumes a previous run, continuing its epoch numbering.
    """
    if not train_set:
        raise ValueError("training set is empty")
    if not val_set:
        raise ValueError("validation set is empty")
    config = config or TrainConfig()
    rng = np.random.default_rng(config.seed)
    state = initial_state or OptimizerState.for_params(
        params, learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2
    )
    history = list(initial_history or [])
    start_epoch = history[-1]["epoch"] + 1 if history else 0

    best_params = params
    best_val = min((h["val_bce"] for h in history), default=float("inf"))
    best_epoch = -1
    stale = 0
    for epoch in range(start_epoch, start_epoch + config.epochs):
        order = np.arange(len(train_set))
        if config.shuffle:
            rng.shuffle(order)
        epoch_loss, n_batches = 0.0, 0
        for features, logits, target in _minibatches(train_set, config.batch_size, order):
            value, grads = gradients(features, logits, target, params, rng=rng)
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite training loss {value} at epoch {epoch}, batch {n_batches}"
                )
            params, state = nadam_step(params, grads, state)
            epoch_loss += value
            n_batches += 1
        val_bce = validation_bce(val_set, params)
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / n_batches, "val_bce": float(val_bce)}
        )
        if val_bce < best_val:
            best_val = val_bce
            best_params = params
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val_bce=float(best_val),
        optimizer_state=state,
    )
