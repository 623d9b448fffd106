"""Classification head and negative log-likelihood objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor, as_tensor, dropout, index, linear, log, parameter, relu, softmax, tsum, xavier_normal_init

EMOTIONS = ("happy", "angry", "sad", "neutral")
PROB_FLOOR = 1e-12


@dataclass
class Classifier:
    W_g: Tensor  # (d_g, d)
    W_e: Tensor  # (C, d_g)
    b: Tensor  # (C,)

    @classmethod
    def init(cls, d: int, d_g: int, n_classes: int, rng, prefix: str = "clf") -> "Classifier":
        return cls(
            xavier_normal_init((d_g, d), rng, name=f"{prefix}.W_g"),
            xavier_normal_init((n_classes, d_g), rng, name=f"{prefix}.W_e"),
            parameter(np.zeros(n_classes), name=f"{prefix}.b"),
        )

    def parameters(self) -> list[Tensor]:
        return [self.W_g, self.W_e, self.b]

    @property
    def n_classes(self) -> int:
        return self.W_e.shape[0]


def classify(clf: Classifier, h, training: bool = False, rng=None, rate: float = 0.5) -> Tensor:
    """Class probabilities ``softmax(W_e dropout(relu(W_g h)) + b)``."""
    h = as_tensor(h)
    if h.shape[-1] != clf.W_g.shape[1]:
        raise ShapeError(f"classifier expects width {clf.W_g.shape[1]}, got {h.shape[-1]}")
    g = relu(linear(h, clf.W_g))
    g = dropout(g, rate, training, rng)
    return softmax(linear(g, clf.W_e) + clf.b, axis=-1)


def nll_loss(probs: Tensor, labels) -> Tensor:
    """Summed cross-entropy ``-sum_i log p_i[y_i]`` with probabilities floored at 1e-12."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim == 1:
        probs = index(probs, (None,))
        labels = labels.reshape(1)
    n_classes = probs.shape[-1]
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"{labels.size} labels for {probs.shape[0]} rows")
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise ContractError(f"labels must lie in [0, {n_classes})")
    picked = index(probs, (np.arange(labels.size), labels))
    return -tsum(log(picked, floor=PROB_FLOOR))


def l2_gradients(params: list[Tensor], coeff: float) -> dict[str, np.ndarray]:
    """Gradient of ``coeff * sum ||W||^2`` for each weight matrix, keyed by name."""
    return {p.name: 2.0 * coeff * p.data for p in params}
