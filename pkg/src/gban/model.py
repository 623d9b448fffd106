"""The full network: two CNN-LSTM encoders, alignment, fusion, classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignedReps, bidirectional_align
from .classifier import Classifier, classify
from .encoders import CnnLstmEncoder, EncodedSequence, encode_speech, encode_text
from .errors import ContractError
from .features import FEATURE_DIM
from .fusion import CONCAT_SUBSETS, REPRESENTATIONS, GgfLayer, concat_fusion, ggf_forward
from .tensor import Tensor, dropout, make_rng, parameter

FUSION_MODES = ("ggf", "concat1", "concat2") + tuple(f"single:{r}" for r in REPRESENTATIONS)


@dataclass
class ModelConfig:
    speech_dim: int = FEATURE_DIM
    embed_dim: int = 300
    speech_channels: tuple[int, ...] = (64, 128)
    speech_kernels: tuple[int, ...] = (5, 3)
    speech_pools: tuple[int, ...] = (4, 2)
    text_channels: tuple[int, ...] = (128,)
    text_kernels: tuple[int, ...] = (3,)
    text_pools: tuple[int, ...] = (2,)
    hidden: int = 128
    classifier_hidden: int = 128
    n_classes: int = 4
    fusion: str = "ggf"
    dropout: float = 0.5

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ContractError(f"fusion mode must be one of {FUSION_MODES}, got {self.fusion!r}")

    @property
    def rep_dim(self) -> int:
        return 2 * self.hidden

    @property
    def fused_dim(self) -> int:
        if self.fusion == "ggf" or self.fusion.startswith("single:"):
            return self.rep_dim
        return self.rep_dim * len(CONCAT_SUBSETS[self.fusion])


@dataclass
class Batch:
    frames: np.ndarray  # (B, N, speech_dim)
    n_frames: np.ndarray  # (B,)
    tokens: np.ndarray  # (B, M) int
    n_tokens: np.ndarray  # (B,)
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class ModelOutput:
    probs: Tensor
    speech: EncodedSequence
    text: EncodedSequence
    aligned: AlignedReps
    fused: Tensor
    z_p: Tensor | None = None
    z_q: Tensor | None = None
    extras: dict = field(default_factory=dict)


class GBAN:
    """Gated bidirectional alignment network.

    ``fusion`` selects how the representations reach the classifier: the
    gated fusion layer, a concatenation baseline, or one representation alone.
    """

    def __init__(self, config: ModelConfig, embeddings: np.ndarray, pad_index: int = 0, seed: int = 0):
        self.config = config
        rng = make_rng(seed)
        self.embedding = parameter(np.array(embeddings, dtype=np.float64), name="text.embedding")
        self.pad_index = pad_index
        if self.embedding.shape[1] != config.embed_dim:
            raise ContractError(
                f"embedding width {self.embedding.shape[1]} != configured {config.embed_dim}")
        self.speech_encoder = CnnLstmEncoder.init(
            config.speech_dim, config.speech_channels, config.speech_kernels, config.speech_pools,
            config.hidden, rng, prefix="speech", strict=True)
        self.text_encoder = CnnLstmEncoder.init(
            config.embed_dim, config.text_channels, config.text_kernels, config.text_pools,
            config.hidden, rng, prefix="text", strict=False)
        self.ggf = GgfLayer.init(config.rep_dim, config.rep_dim, rng) if config.fusion == "ggf" else None
        self.classifier = Classifier.init(config.fused_dim, config.classifier_hidden, config.n_classes, rng)

    def parameters(self) -> dict[str, Tensor]:
        params = self.speech_encoder.parameters() + [self.embedding] + self.text_encoder.parameters()
        if self.ggf is not None:
            params += self.ggf.parameters()
        params += self.classifier.parameters()
        return {p.name: p for p in params}

    def weight_names(self) -> list[str]:
        """Parameters under L2 decay: weight matrices and kernels, not biases or embeddings."""
        return [name for name, p in self.parameters().items()
                if p.ndim >= 2 and name != "text.embedding"]

    def forward(self, batch: Batch, training: bool = False, rng=None) -> ModelOutput:
        cfg = self.config
        speech = encode_speech((batch.frames, batch.n_frames), self.speech_encoder)
        text = encode_text((batch.tokens, batch.n_tokens), self.embedding, self.text_encoder, self.pad_index)
        aligned = bidirectional_align(speech.seq, text.seq, speech.lengths, text.lengths)
        reps = {"a_s": aligned.a_s, "a_t": aligned.a_t, "h_s": speech.last, "h_t": text.last}
        z_p = z_q = None
        if cfg.fusion == "ggf":
            fused, z_p, z_q = ggf_forward(self.ggf, *(reps[r] for r in REPRESENTATIONS))
            fused = dropout(fused, cfg.dropout, training, rng)
        elif cfg.fusion.startswith("single:"):
            fused = reps[cfg.fusion.split(":", 1)[1]]
        else:
            fused = concat_fusion(*(reps[r] for r in REPRESENTATIONS), subset=CONCAT_SUBSETS[cfg.fusion])
        probs = classify(self.classifier, fused, training=training, rng=rng, rate=cfg.dropout)
        return ModelOutput(probs, speech, text, aligned, fused, z_p, z_q)
