"""CNN-LSTM encoders for the speech and text streams.

An encoder is a stack of ``conv -> ReLU -> max-pool`` layers followed by one
bidirectional LSTM.  Batches are (B, T, D) arrays with a per-sample count of
valid (non-padded) steps; recurrence runs only over each sample's valid
prefix and padded positions come out as zero vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySequenceError, SequenceTooShortError, ShapeError
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    conv1d,
    conv_output_length,
    embedding,
    gather_time,
    index,
    linear,
    max_pool1d,
    mul,
    parameter,
    relu,
    sigmoid,
    stack,
    tanh,
    xavier_normal_init,
)


@dataclass
class ConvLayer:
    kernels: Tensor  # (w, C_in, C_out)
    bias: Tensor  # (C_out,)
    stride: int = 1
    pool_window: int = 2
    pool_stride: int = 2

    @property
    def width(self) -> int:
        return self.kernels.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(conv1d(x, self.kernels, self.bias, self.stride))
        return max_pool1d(y, self.pool_window, self.pool_stride)

    def output_length(self, n: int) -> int:
        t = conv_output_length(n, self.width, self.stride)
        return conv_output_length(t, self.pool_window, self.pool_stride)


@dataclass
class LstmLayer:
    W: Tensor  # (4H, D), gate order i, f, g, o
    U: Tensor  # (4H, H)
    b: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng, prefix: str = "lstm") -> "LstmLayer":
        bias = np.zeros(4 * hidden)
        bias[hidden:2 * hidden] = 1.0
        return cls(
            xavier_normal_init((4 * hidden, d_in), rng, name=f"{prefix}.W"),
            xavier_normal_init((4 * hidden, hidden), rng, name=f"{prefix}.U"),
            parameter(bias, name=f"{prefix}.b"),
        )


def stack_output_length(n: int, layers: Sequence[ConvLayer]) -> int:
    """Length after a conv/pool stack; <= 0 means the input is too short."""
    for layer in layers:
        if n < layer.width:
            return 0
        n = conv_output_length(n, layer.width, layer.stride)
        if n < layer.pool_window:
            return 0
        n = conv_output_length(n, layer.pool_window, layer.pool_stride)
    return n


def min_input_length(layers: Sequence[ConvLayer]) -> int:
    n = 1
    while stack_output_length(n, layers) < 1:
        n += 1
    return n


def _cell(layer: LstmLayer, xw: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    hid = layer.hidden
    z = xw + linear(h, layer.U)
    i = sigmoid(z[..., :hid])
    f = sigmoid(z[..., hid:2 * hid])
    g = tanh(z[..., 2 * hid:3 * hid])
    o = sigmoid(z[..., 3 * hid:])
    c = f * c + i * g
    return o * tanh(c), c


def lstm_step(layer: LstmLayer, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM update: returns (h, c)."""
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    if x.shape[-1] != layer.W.shape[1]:
        raise ShapeError(f"lstm_step: input {x.shape} vs W {layer.W.shape}")
    if h_prev.shape[-1] != layer.hidden or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: state {h_prev.shape}/{c_prev.shape} vs hidden {layer.hidden}")
    return _cell(layer, linear(x, layer.W) + layer.b, h_prev, c_prev)


def _run_direction(layer: LstmLayer, x: Tensor, lengths: np.ndarray, steps: int) -> tuple[Tensor, Tensor]:
    """Unroll over ``steps`` positions; a sample's state freezes past its length."""
    batch = x.shape[0]
    xw = linear(x, layer.W) + layer.b
    h = Tensor(np.zeros((batch, layer.hidden)))
    c = Tensor(np.zeros((batch, layer.hidden)))
    outs = []
    for t in range(steps):
        h_new, c_new = _cell(layer, xw[:, t], h, c)
        live = (lengths > t).astype(np.float64)[:, None]
        if live.all():
            h, c = h_new, c_new
        else:
            hold = 1.0 - live
            h = mul(h_new, live) + mul(h, hold)
            c = mul(c_new, live) + mul(c, hold)
        outs.append(h)
    return stack(outs, axis=1), h


def reverse_index(lengths: np.ndarray, steps: int) -> np.ndarray:
    """Per-sample index that reverses each valid prefix and leaves padding in place."""
    t = np.arange(steps)[None, :]
    n = np.asarray(lengths)[:, None]
    return np.where(t < n, n - 1 - t, t)


def bilstm(fwd: LstmLayer, bwd: LstmLayer, seq, valid_len) -> tuple[Tensor, Tensor]:
    """Bidirectional LSTM.

    ``seq`` is (T, D), (B, T, D) or a list of (D,) tensors; ``valid_len`` an
    int or a (B,) array.  Output position i is the forward state after step i
    joined to the backward pass's (K-i+1)-th state, i.e. the backward state
    that has consumed steps K..i.  ``last_hidden`` joins the final forward and
    final backward states.
    """
    if isinstance(seq, (list, tuple)):
        seq = stack(seq, axis=0)
    seq = as_tensor(seq)
    single = seq.ndim == 2
    x = index(seq, (None,)) if single else seq
    lengths = np.atleast_1d(np.asarray(valid_len, dtype=np.int64))
    batch, total = x.shape[0], x.shape[1]
    if lengths.shape != (batch,):
        raise ShapeError(f"bilstm: {lengths.shape[0]} lengths for a batch of {batch}")
    if np.any(lengths < 1):
        raise EmptySequenceError("bilstm: valid_len must be >= 1")
    if np.any(lengths > total):
        raise ShapeError(f"bilstm: valid_len {lengths.max()} exceeds sequence length {total}")

    steps = int(lengths.max())
    x = x[:, :steps]
    rev = reverse_index(lengths, steps)
    mask = (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)[..., None]

    f_states, f_last = _run_direction(fwd, x, lengths, steps)
    r_states, r_last = _run_direction(bwd, gather_time(x, rev), lengths, steps)
    states = mul(concat([f_states, gather_time(r_states, rev)], axis=-1), mask)
    if steps < total:
        pad = Tensor(np.zeros((batch, total - steps, states.shape[-1])))
        states = concat([states, pad], axis=1)
    last = concat([f_last, r_last], axis=-1)
    if single:
        return states[0], last[0]
    return states, last


@dataclass
class EncodedSequence:
    seq: Tensor  # (B, K, 2H)
    last: Tensor  # (B, 2H)
    lengths: np.ndarray  # (B,) valid output steps


class CnnLstmEncoder:
    """Conv stack plus one BiLSTM.

    With ``strict`` a sample whose valid length cannot feed the conv stack is
    an error; otherwise short samples are widened over their zero padding to
    the minimum length the stack accepts.
    """

    def __init__(self, convs: list[ConvLayer], fwd: LstmLayer, bwd: LstmLayer, strict: bool = True):
        self.convs = convs
        self.fwd = fwd
        self.bwd = bwd
        self.strict = strict

    @classmethod
    def init(cls, d_in: int, channels: Sequence[int], kernels: Sequence[int], pools: Sequence[int],
             hidden: int, rng, prefix: str, strict: bool = True) -> "CnnLstmEncoder":
        if not (len(channels) == len(kernels) == len(pools)):
            raise ShapeError("conv channels, kernels and pools must have equal length")
        convs = []
        c_in = d_in
        for n, (c_out, w, p) in enumerate(zip(channels, kernels, pools)):
            convs.append(ConvLayer(
                xavier_normal_init((w, c_in, c_out), rng, name=f"{prefix}.conv{n}.kernels"),
                parameter(np.zeros(c_out), name=f"{prefix}.conv{n}.bias"),
                stride=1, pool_window=p, pool_stride=p,
            ))
            c_in = c_out
        fwd = LstmLayer.init(c_in, hidden, rng, prefix=f"{prefix}.lstm_fwd")
        bwd = LstmLayer.init(c_in, hidden, rng, prefix=f"{prefix}.lstm_bwd")
        return cls(convs, fwd, bwd, strict=strict)

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.convs:
            out += [layer.kernels, layer.bias]
        for lstm in (self.fwd, self.bwd):
            out += [lstm.W, lstm.U, lstm.b]
        return out

    @property
    def out_dim(self) -> int:
        return 2 * self.fwd.hidden

    def output_length(self, n: int) -> int:
        return stack_output_length(n, self.convs)

    def effective_lengths(self, n_valid, total: int) -> np.ndarray:
        n_valid = np.atleast_1d(np.asarray(n_valid, dtype=np.int64))
        need = min_input_length(self.convs)
        short = n_valid < need
        if short.any():
            if self.strict or total < need:
                raise SequenceTooShortError(
                    f"valid length {int(n_valid[short].min())} is below the conv stack minimum {need}")
            n_valid = np.maximum(n_valid, need)
        return n_valid

    def __call__(self, x, n_valid) -> EncodedSequence:
        x = as_tensor(x)
        if x.ndim == 2:
            x = index(x, (None,))
        lens_in = self.effective_lengths(n_valid, x.shape[1])
        # positions past the longest valid prefix never reach a valid output
        h = x[:, :int(lens_in.max())]
        for layer in self.convs:
            h = layer(h)
        lens_out = np.array([self.output_length(int(n)) for n in lens_in], dtype=np.int64)
        seq, last = bilstm(self.fwd, self.bwd, h, lens_out)
        return EncodedSequence(seq, last, lens_out)


def encode_speech(frames, encoder: CnnLstmEncoder) -> EncodedSequence:
    """Encode one FrameSequence or a (frames, n_valid) batch pair."""
    if hasattr(frames, "frames"):
        return encoder(frames.frames[None], [frames.n_valid])
    data, n_valid = frames
    return encoder(data, n_valid)


def encode_text(tokens, table: Tensor, encoder: CnnLstmEncoder, pad_index: int = 0) -> EncodedSequence:
    """Encode one TokenSequence or an (indices, n_valid) batch pair via embedding ``table``."""
    if hasattr(tokens, "indices"):
        idx, n_valid = tokens.indices[None], [tokens.n_valid]
    else:
        idx, n_valid = tokens
    emb = embedding(table, np.asarray(idx), frozen_row=pad_index)
    return encoder(emb, n_valid)
