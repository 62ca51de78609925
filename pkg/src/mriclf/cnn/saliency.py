"""Guided-backpropagation saliency from the positive-class logit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoCorrectPositives
from .model import CnnModel, backward, forward, prepare_input


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray
    threshold: float
    threshold_mask: np.ndarray
    n_subjects: int


def input_gradient(model: CnnModel, volumes, guided: bool = True, target_class: int = 1) -> np.ndarray:
    """d logit[target_class] / d volume per subject, with softmax replaced by identity.

    Inference mode throughout (dropout off, batchnorm on running statistics).
    """
    x = prepare_input(model, volumes)
    _, logits, cache = forward(model, x, training=False)
    seed_grad = np.zeros_like(logits)
    seed_grad[:, target_class] = 1.0
    _, dx = backward(model, seed_grad, cache, guided=guided, need_input_grad=True)
    # chain through the input standardization
    return dx[..., 0].astype(np.float64) / model.input_std


def threshold_map(values, fraction: float = 1.0 / 3.0):
    """Voxels whose magnitude reaches ``fraction`` of the maximum magnitude."""
    mag = np.abs(values)
    peak = float(mag.max())
    if peak == 0:
        return 0.0, np.zeros(values.shape, dtype=bool)
    thr = fraction * peak
    return thr, mag >= thr


def guided_backprop_saliency(model: CnnModel, volumes, labels, batch_size: int = 8) -> SaliencyMap:
    """Average guided-backprop map over correctly classified positive subjects."""
    volumes = np.asarray(volumes, dtype=np.float32)
    labels = np.asarray(labels)
    total = None
    count = 0
    for start in range(0, len(labels), batch_size):
        vb = volumes[start:start + batch_size]
        lb = labels[start:start + batch_size]
        x = prepare_input(model, vb)
        probs, _, _ = forward(model, x, training=False, keep_cache=False)
        keep = (lb == 1) & (probs[:, 1] >= 0.5)
        if not keep.any():
            continue
        grads = input_gradient(model, vb[keep])
        total = grads.sum(axis=0) if total is None else total + grads.sum(axis=0)
        count += int(keep.sum())
    if count == 0:
        raise NoCorrectPositives("no positive subject was classified correctly")
    mean = total / count
    thr, mask = threshold_map(mean)
    return SaliencyMap(mean, thr, mask, count)
