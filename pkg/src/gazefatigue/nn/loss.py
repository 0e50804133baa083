"""Binary cross-entropy on the fatigue-class softmax probability."""
from __future__ import annotations

import numpy as np

from gazefatigue.errors import ShapeMismatch
from gazefatigue.nn.layers import softmax

PROB_CLAMP = 1e-7


def _check(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=float)
    if probs.ndim != 2 or probs.shape[1] != 2 or labels.shape != (probs.shape[0],):
        raise ShapeMismatch(f"probs {probs.shape} vs labels {labels.shape}")
    return labels


def bce_loss(probs: np.ndarray, labels) -> float:
    """Mean of -[g ln p1 + (1-g) ln(1-p1)] with p1 clamped to [1e-7, 1-1e-7].

    ``probs`` is a B x 2 matrix of class probabilities; column 1 is the
    fatigue class.
    """
    g = _check(probs, labels)
    p1 = np.clip(probs[:, 1], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-(g * np.log(p1) + (1.0 - g) * np.log1p(-p1))))


def softmax_bce(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the logits.

    The clamp is part of the loss, so samples whose probability sits outside
    the clamp band contribute zero gradient.
    """
    probs = softmax(logits)
    g = _check(probs, labels)
    loss = bce_loss(probs, g)
    p1 = probs[:, 1]
    inside = (p1 > PROB_CLAMP) & (p1 < 1.0 - PROB_CLAMP)
    d1 = (p1 - g) * inside / len(g)
    dlogits = np.stack([-d1, d1], axis=1).astype(logits.dtype)
    return loss, dlogits
