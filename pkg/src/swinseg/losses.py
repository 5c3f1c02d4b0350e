"""Segmentation training loss: cross-entropy blended with soft Dice."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _one_hot(labels: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes}), "
                         f"got range [{labels.min()}, {labels.max()}]")
    eye = np.eye(num_classes, dtype=dtype)
    return eye[labels]


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean pixel-wise negative log-likelihood; class axis is last."""
    k = logits.shape[-1]
    onehot = Tensor(_one_hot(labels, k, logits.dtype))
    logp = T.log_softmax(logits, axis=-1)
    return -T.mean(T.tensor_sum(logp * onehot, axis=-1))


def soft_dice_loss(logits: Tensor, labels: np.ndarray,
                   eps: float = 1e-6) -> Tensor:
    """1 - mean over classes of the soft Dice overlap of softmax(logits)."""
    k = logits.shape[-1]
    onehot = Tensor(_one_hot(labels, k, logits.dtype))
    probs = T.softmax(logits, axis=-1)
    axes = tuple(range(logits.ndim - 1))
    inter = T.tensor_sum(probs * onehot, axis=axes)
    denom = T.tensor_sum(probs, axis=axes) + T.tensor_sum(onehot, axis=axes)
    dice = (2.0 * inter + eps) / (denom + eps)
    return 1.0 - T.mean(dice)


def seg_loss(logits: Tensor, labels: np.ndarray, ce_weight: float = 0.5) -> Tensor:
    """ce_weight * cross-entropy + (1 - ce_weight) * soft Dice."""
    if not 0.0 <= ce_weight <= 1.0:
        raise ValueError("ce_weight must lie in [0, 1]")
    loss = cross_entropy(logits, labels) * ce_weight
    if ce_weight < 1.0:
        loss = loss + soft_dice_loss(logits, labels) * (1.0 - ce_weight)
    return loss
