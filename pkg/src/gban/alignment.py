"""Bidirectional attention alignment between the speech and text sequences.

For speech states s_1..s_K and text states t_1..t_L, each text position j
attends over speech with weights softmax_i(tanh(s_i . t_j)); the attended
vectors are averaged over j to give the text-aligned speech vector ``a_s``.
The mirror construction gives the speech-aligned text vector ``a_t``.
Padded positions are excluded from both the softmax and the average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySequenceError, ShapeError
from .tensor import Tensor, as_tensor, index, masked_mean, matmul, softmax, swapaxes, tanh


@dataclass
class AlignedReps:
    a_s: Tensor  # (B, D) text-aligned speech
    a_t: Tensor  # (B, D) speech-aligned text
    alpha: Tensor  # (B, L, K)
    beta: Tensor  # (B, K, L)


def _batched(seq, lengths) -> tuple[Tensor, np.ndarray, bool]:
    seq = as_tensor(seq)
    single = seq.ndim == 2
    if single:
        seq = index(seq, (None,))
    lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
    if lengths.shape != (seq.shape[0],):
        raise ShapeError(f"{lengths.shape[0]} lengths for a batch of {seq.shape[0]}")
    if np.any(lengths < 1):
        raise EmptySequenceError("alignment needs at least one valid position per side")
    if np.any(lengths > seq.shape[1]):
        raise ShapeError(f"valid length {lengths.max()} exceeds sequence length {seq.shape[1]}")
    return seq, lengths, single


def _valid_mask(lengths: np.ndarray, steps: int) -> np.ndarray:
    return np.arange(steps)[None, :] < lengths[:, None]


def attend(queries, keys, q_valid, k_valid) -> tuple[Tensor, Tensor, Tensor]:
    """Attention of each query position over the key sequence.

    Returns ``(pooled, weights, scores)``: ``scores[b, j, i] = tanh(k_i . q_j)``,
    ``weights`` its softmax over valid keys, and ``pooled`` the mean over valid
    queries of the attended key vectors.
    """
    q, q_len, single = _batched(queries, q_valid)
    k, k_len, _ = _batched(keys, k_valid)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"alignment needs equal state widths, got {k.shape[-1]} and {q.shape[-1]}")
    if q.shape[0] != k.shape[0]:
        raise ShapeError("speech and text batches differ in size")
    scores = tanh(matmul(q, swapaxes(k, 1, 2)))
    key_mask = _valid_mask(k_len, k.shape[1])[:, None, :]
    weights = softmax(scores, axis=-1, mask=key_mask)
    attended = matmul(weights, k)
    pooled = masked_mean(attended, _valid_mask(q_len, q.shape[1]), axis=1)
    if single:
        return pooled[0], weights[0], scores[0]
    return pooled, weights, scores


def align_speech_to_text(speech_seq, text_seq, k_valid, l_valid) -> tuple[Tensor, Tensor]:
    """Text-aligned speech vector ``a_s`` and attention matrix alpha (L x K)."""
    a_s, alpha, _ = attend(text_seq, speech_seq, l_valid, k_valid)
    return a_s, alpha


def align_text_to_speech(text_seq, speech_seq, l_valid, k_valid) -> tuple[Tensor, Tensor]:
    """Speech-aligned text vector ``a_t`` and attention matrix beta (K x L)."""
    a_t, beta, _ = attend(speech_seq, text_seq, k_valid, l_valid)
    return a_t, beta


def bidirectional_align(speech_seq, text_seq, k_valid, l_valid) -> AlignedReps:
    a_s, alpha = align_speech_to_text(speech_seq, text_seq, k_valid, l_valid)
    a_t, beta = align_text_to_speech(text_seq, speech_seq, l_valid, k_valid)
    return AlignedReps(a_s, a_t, alpha, beta)
