"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from gazefatigue.nn.layers import Module
from gazefatigue.nn.loss import softmax_bce
from gazefatigue.nn.models import Model, loss_and_grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """||a - n|| / max(||a||, ||n||, floor); the floor covers gradients that are truly zero."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-6,
                 indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. entries of ``x`` (perturbed in place)."""
    indices = range(x.size) if indices is None else indices
    out = np.zeros(len(indices))
    flat = x.reshape(-1)
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        out[j] = (hi - lo) / (2 * eps)
    return out


def check_layer(layer: Module, x: np.ndarray, rng: np.random.Generator, eps: float = 1e-6,
                train: bool = True) -> dict[str, float]:
    """Relative errors for the input and every parameter of ``layer``.

    The scalar objective is sum(layer(x) * R) for a fixed random R.  Buffers
    are restored after each probe so batch-norm running statistics don't drift.
    """
    out = layer.forward(x, train)
    weights = rng.standard_normal(out.shape)
    saved = {name: b.copy() for name, b in layer.named_buffers()}
    layer.zero_grad()
    dx = layer.backward(weights)

    def objective() -> float:
        val = float(np.sum(layer.forward(x, train) * weights))
        for name, b in saved.items():
            layer.set_array(name, b.copy(), "buffers")
        return val

    errors = {"input": relative_error(dx, numeric_grad(objective, x, eps))}
    grads = dict(layer.named_grads())
    for name, p in layer.named_parameters():
        errors[name] = relative_error(grads[name], numeric_grad(objective, p, eps))
    return errors


def check_loss(logits: np.ndarray, labels, eps: float = 1e-6) -> float:
    _, analytic = softmax_bce(logits, labels)
    numeric = numeric_grad(lambda: softmax_bce(logits, labels)[0], logits, eps)
    return relative_error(analytic, numeric)


def check_model(model: Model, batch: np.ndarray, labels, rng: np.random.Generator,
                eps: float = 1e-6, max_entries: int | None = 20) -> dict[str, float]:
    """Per-parameter relative error of the full TRAIN-mode loss gradient.

    ``max_entries`` samples that many coordinates per parameter array
    (all of them when None).
    """
    saved = {name: b.copy() for name, b in model.buffers().items()}
    _, grads = loss_and_grads(model, batch, labels)
    for name, b in saved.items():
        model.net.set_array(name, b.copy(), "buffers")

    def objective() -> float:
        mode = model.mode
        model.train()
        val = softmax_bce(model.logits(batch), labels)[0]
        model.mode = mode
        for name, b in saved.items():
            model.net.set_array(name, b.copy(), "buffers")
        return val

    errors = {}
    for name, p in model.parameters().items():
        if max_entries is None or p.size <= max_entries:
            idx = np.arange(p.size)
        else:
            idx = rng.choice(p.size, max_entries, replace=False)
        numeric = numeric_grad(objective, p, eps, idx)
        errors[name] = relative_error(grads[name].reshape(-1)[idx], numeric)
    return errors
