"""Group gated fusion of the four utterance representations.

Group 1 mixes the aligned vectors (a_s, a_t), group 2 the last hidden states
(h_s, h_t).  Within a group a sigmoid gate computed from both members picks
an elementwise convex combination of their tanh projections; the two group
outputs are summed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, EmptySequenceError, ShapeError
from .tensor import Tensor, as_tensor, concat, linear, sigmoid, tanh, xavier_normal_init

REPRESENTATIONS = ("a_s", "a_t", "h_s", "h_t")


@dataclass
class GgfLayer:
    W_s_a: Tensor
    W_t_a: Tensor
    W_s_h: Tensor
    W_t_h: Tensor
    W_z_p: Tensor  # (d, 2 d_in)
    W_z_q: Tensor

    @classmethod
    def init(cls, d_in: int, d: int, rng, prefix: str = "ggf") -> "GgfLayer":
        def w(name, shape):
            return xavier_normal_init(shape, rng, name=f"{prefix}.{name}")

        return cls(
            w("W_s_a", (d, d_in)), w("W_t_a", (d, d_in)),
            w("W_s_h", (d, d_in)), w("W_t_h", (d, d_in)),
            w("W_z_p", (d, 2 * d_in)), w("W_z_q", (d, 2 * d_in)),
        )

    def parameters(self) -> list[Tensor]:
        return [self.W_s_a, self.W_t_a, self.W_s_h, self.W_t_h, self.W_z_p, self.W_z_q]

    @property
    def d_in(self) -> int:
        return self.W_s_a.shape[1]

    @property
    def d(self) -> int:
        return self.W_s_a.shape[0]


def _gated_pair(x_s: Tensor, x_t: Tensor, w_s: Tensor, w_t: Tensor, w_z: Tensor) -> tuple[Tensor, Tensor]:
    p_s = tanh(linear(x_s, w_s))
    p_t = tanh(linear(x_t, w_t))
    z = sigmoid(linear(concat([x_s, x_t], axis=-1), w_z))
    return z * p_s + (1.0 - z) * p_t, z


def ggf_forward(layer: GgfLayer, a_s, a_t, h_s, h_t) -> tuple[Tensor, Tensor, Tensor]:
    """Fused vector ``h`` and the two gate activations ``(z_p, z_q)``."""
    reps = [as_tensor(r) for r in (a_s, a_t, h_s, h_t)]
    for name, r in zip(REPRESENTATIONS, reps):
        if r.shape[-1] != layer.d_in:
            raise ShapeError(f"ggf: {name} has width {r.shape[-1]}, layer expects {layer.d_in}")
    a_s, a_t, h_s, h_t = reps
    group1, z_p = _gated_pair(a_s, a_t, layer.W_s_a, layer.W_t_a, layer.W_z_p)
    group2, z_q = _gated_pair(h_s, h_t, layer.W_s_h, layer.W_t_h, layer.W_z_q)
    return group1 + group2, z_p, z_q


CONCAT_SUBSETS = {
    "concat1": ("a_s", "a_t"),
    "concat2": REPRESENTATIONS,
}


def concat_fusion(a_s, a_t, h_s, h_t, subset: Sequence[str]) -> Tensor:
    """Concatenate the chosen representations in the fixed order a_s, a_t, h_s, h_t."""
    chosen = set(subset)
    unknown = chosen - set(REPRESENTATIONS)
    if unknown:
        raise ContractError(f"unknown representations {sorted(unknown)}")
    if not chosen:
        raise ContractError("concat_fusion needs at least one representation")
    reps = dict(zip(REPRESENTATIONS, (a_s, a_t, h_s, h_t)))
    parts = [as_tensor(reps[name]) for name in REPRESENTATIONS if name in chosen]
    return parts[0] if len(parts) == 1 else concat(parts, axis=-1)


@dataclass
class GateReport:
    mean_zp: float
    mean_zq: float
    n_samples: int

    @property
    def weights(self) -> dict[str, float]:
        return {
            "a_s": self.mean_zp,
            "a_t": 1.0 - self.mean_zp,
            "h_s": self.mean_zq,
            "h_t": 1.0 - self.mean_zq,
        }

    def to_text(self) -> str:
        lines = [f"samples: {self.n_samples}", f"mean_zp: {self.mean_zp:.6f}", f"mean_zq: {self.mean_zq:.6f}"]
        lines += [f"{k}: {v:.6f}" for k, v in self.weights.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GateReport":
        fields = dict(line.split(": ", 1) for line in text.strip().splitlines())
        return cls(float(fields["mean_zp"]), float(fields["mean_zq"]), int(fields["samples"]))


def gate_summary(batches: Iterable[tuple]) -> GateReport:
    """Average gate activations: mean over vector elements per sample, then over samples.

    ``batches`` yields ``(z_p, z_q)`` pairs of shape (d,) or (B, d).
    """
    zp_means: list[np.ndarray] = []
    zq_means: list[np.ndarray] = []
    for z_p, z_q in batches:
        zp = np.atleast_2d(getattr(z_p, "data", z_p))
        zq = np.atleast_2d(getattr(z_q, "data", z_q))
        zp_means.append(zp.mean(axis=-1))
        zq_means.append(zq.mean(axis=-1))
    if not zp_means:
        raise EmptySequenceError("gate_summary needs at least one sample")
    zp_all = np.concatenate(zp_means)
    zq_all = np.concatenate(zq_means)
    return GateReport(float(zp_all.mean()), float(zq_all.mean()), int(zp_all.size))
