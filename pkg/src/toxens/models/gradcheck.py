"""Finite-difference certification of the hand-written backward passes.

Every model family can be built at miniature dimensions (hidden size <= 8,
sequence length <= 6) in float64 with dropout disabled; analytic gradients
are then compared entry-by-entry against central differences with step
1e-5.  The reported relative error uses a unit floor in the denominator:
|a - n| / max(1, |a|, |n|).
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..rng import derive_rng
from . import logistic
from .network import NeuralNetwork
from .spec import ClassifierSpec

FD_STEP = 1e-5


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def check_tensor_grads(loss_fn: Callable[[], float], tensor: np.ndarray,
                       analytic: np.ndarray, step: float = FD_STEP) -> float:
    """Max relative error over every entry of one parameter tensor."""
    worst = 0.0
    flat = tensor.reshape(-1)
    aflat = analytic.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        up = loss_fn()
        flat[i] = original - step
        down = loss_fn()
        flat[i] = original
        numeric = (up - down) / (2 * step)
        worst = max(worst, relative_error(float(aflat[i]), numeric))
    return worst


def gradient_check(spec: ClassifierSpec, batch_size: int = 4, seed: int = 0) -> float:
    """Worst relative error across all trainable tensors of a miniature model."""
    if spec.family in ("lr_word", "lr_char"):
        return _check_logistic(spec, batch_size, seed)
    return _check_network(spec, batch_size, seed)


def _check_logistic(spec: ClassifierSpec, batch_size: int, seed: int) -> float:
    rng = derive_rng(seed, "gradcheck", spec.family)
    d = 6
    X = sp.csr_matrix(rng.random((batch_size, d)))
    theta = rng.normal(size=d + 1)
    y = rng.integers(0, 2, size=batch_size).astype(np.float64)
    _, analytic = logistic.binary_loss_and_grad(theta, X, y, l2=1.0)

    def loss_fn() -> float:
        return logistic.binary_loss_and_grad(theta, X, y, 1.0)[0]

    return check_tensor_grads(loss_fn, theta, analytic)


def _miniature_hp(spec: ClassifierSpec) -> dict:
    hp = dict(spec.hyperparameters)
    hp.update({
        "embedding_dim": 5,
        "units": 4,
        "attention_dim": 3,
        "dropout": 0.0,
        "spatial_dropout": 0.0,
    })
    if spec.family == "cnn":
        hp["filter_widths"] = [2, 3]
        hp["filters_per_width"] = 3
    return hp


def _check_network(spec: ClassifierSpec, batch_size: int, seed: int) -> float:
    rng = derive_rng(seed, "gradcheck", spec.family)
    T, vocab, n_classes = 6, 9, 3
    hp = _miniature_hp(spec)
    net = NeuralNetwork(spec.family, vocab_size=vocab, n_classes=n_classes,
                        head=spec.head, hp=hp, seed=seed, dtype=np.float64)
    # tie-free parameters: small gaussian jitter keeps max-pool argmaxes unique
    for name in net.trainable():
        net.params[name] = net.params[name] + 0.1 * rng.normal(size=net.params[name].shape)
    net.params["emb"][0] = 0.0
    ids = rng.integers(1, vocab, size=(batch_size, T))
    ids[0, T - 2:] = 0  # exercise the padding mask
    if spec.head == "softmax":
        Y = np.zeros((batch_size, n_classes))
        Y[np.arange(batch_size), rng.integers(0, n_classes, size=batch_size)] = 1.0
    else:
        Y = rng.integers(0, 2, size=(batch_size, n_classes)).astype(np.float64)

    _, grads = net.loss_and_grads(ids, Y, train=False)

    worst = 0.0
    for name in net.trainable():
        tensor = net.params[name]

        def loss_fn() -> float:
            net.params["emb"][0] = 0.0
            return net.loss_and_grads(ids, Y, train=False)[0]

        analytic = grads[name]
        if name == "emb":
            # only rows that can receive gradient (perturbing unused rows is a no-op)
            used = np.unique(ids[ids != 0])
            for row in used:
                worst = max(worst, check_tensor_grads(loss_fn, tensor[row], analytic[row]))
        else:
            worst = max(worst, check_tensor_grads(loss_fn, tensor, analytic))
    return worst
