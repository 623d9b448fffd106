"""Adam with bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericFaultError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """Update ``params`` in place from ``grads`` (both keyed by parameter name).

    All gradients are validated before any parameter moves, so a non-finite
    gradient leaves the model and the optimiser state untouched.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericFaultError(f"non-finite gradient for parameter {name!r}", name=name)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p = params[name]
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
