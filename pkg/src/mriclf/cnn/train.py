"""Adam training with step-decayed learning rate and validation-AUC early stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..dataset import mixup_augment
from ..errors import EmptyValidation, ShapeMismatch
from ..rng import substream
from ..stats import ScoredSet, auc
from .model import CnnModel, build_model, loss_and_grads, predict, prepare_input

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epsilon: float = 1e-8
    decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    dropout_rate: float = 0.2
    batch_size: int = 4
    lr_halving_epochs: int = 10
    patience: int = 20
    max_epochs: int = 200
    bn_momentum: float = 0.99
    target_per_class: int = 1000
    mixup_lambda: float = 0.8
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or not self.epsilon > 0 or self.decay < 0:
            raise ValueError("learning_rate and epsilon must be positive, decay nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1 or self.lr_halving_epochs < 1:
            raise ValueError("batch_size, patience, max_epochs and lr_halving_epochs must be positive")
        if self.target_per_class < 1:
            raise ValueError("target_per_class must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Base rate halved after every ``lr_halving_epochs`` epochs (epochs count from 0)."""
    return config.learning_rate * 0.5 ** (epoch // config.lr_halving_epochs)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One bias-corrected Adam update, in place. Increments ``state.t``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / c1
        vhat = v / c2
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


class EarlyStopping:
    """Track the best score; ``stop`` turns true ``patience`` epochs after the last strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        if score > self.best:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def stop(self) -> bool:
        return self.stale >= self.patience


def batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    """Shuffled batches; a trailing singleton batch is merged into its predecessor
    so batch normalization always sees two samples."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and out[-1].size == 1:
        out[-2] = np.concatenate([out[-2], out[-1]])
        out.pop()
    return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auc: float
    lr: float


def train(model: CnnModel | None, train_volumes, train_labels, val_volumes, val_labels,
          config: TrainConfig, val_scorer: Callable[[CnnModel], float] | None = None,
          train_ids=None):
    """Train on same-class mixup samples of the core set; keep the best-validation-AUC epoch.

    Labels are 0/1 with 1 the positive class. ``val_scorer`` overrides the
    validation AUC computation (used to script early-stopping behavior).
    Returns ``(best_model, records)``.
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    val_labels = np.asarray(val_labels, dtype=np.int64)
    if len(val_labels) == 0:
        raise EmptyValidation("validation set is empty")
    if model is None:
        model = build_model(config.seed, dropout_rate=config.dropout_rate, bn_momentum=config.bn_momentum)
    model = model.copy()
    model.dropout_rate = config.dropout_rate
    model.bn_momentum = config.bn_momentum

    samples = list(zip(np.asarray(train_volumes, dtype=np.float32), train_labels.tolist()))
    augmented = mixup_augment(samples, config.target_per_class, config.mixup_lambda, config.seed, ids=train_ids)
    aug_x = augmented.volumes
    aug_y = augmented.labels.astype(np.int64)
    model.input_mean = float(aug_x.mean(dtype=np.float64))
    model.input_std = float(aug_x.std(dtype=np.float64)) or 1.0
    x_all = prepare_input(model, aug_x)
    targets = np.eye(2)[aug_y]

    if val_scorer is None:
        val_x = np.asarray(val_volumes, dtype=np.float32)

        def val_scorer(m):
            probs = predict(m, val_x)
            return auc(ScoredSet.build(range(len(val_labels)), val_labels, probs))

    adam = AdamState()
    stopper = EarlyStopping(config.patience)
    best = model.copy()
    records: list[EpochRecord] = []
    for epoch in range(config.max_epochs):
        lr_epoch = lr_for_epoch(config, epoch)
        rng = substream(config.seed, "shuffle", epoch)
        losses = []
        for idx in batches(len(aug_y), config.batch_size, rng):
            loss, grads, _ = loss_and_grads(model, x_all[idx], targets[idx], training=True,
                                            step=adam.t, seed=config.seed)
            lr = lr_epoch / (1.0 + config.decay * adam.t)
            adam_step(model.params, grads, adam, lr, config.beta1, config.beta2, config.epsilon)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(aug_y))
        score = float(val_scorer(model))
        records.append(EpochRecord(epoch, train_loss, score, lr_epoch))
        if stopper.update(epoch, score):
            best = model.copy()
        log.info("epoch %d loss %.4f val_auc %.4f lr %.6g", epoch, train_loss, score, lr_epoch)
        if stopper.stop:
            break
    best.meta = dict(model.meta, best_epoch=stopper.best_epoch, best_val_auc=stopper.best)
    return best, records


def write_training_log(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auc", "lr"])
        for r in records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_auc), repr(r.lr)])
