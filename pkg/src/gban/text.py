"""Transcript tokenisation and pretrained word-vector lookup."""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmbeddingFormatError
from .tensor import Tensor, embedding, make_rng

logger = logging.getLogger(__name__)

EMBED_DIM = 300
MAX_TOKENS = 25
PAD = "<pad>"
OOV = "<unk>"

def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, trim edge punctuation.

    Apostrophes survive inside a word ("that's") but not at its edges.
    """
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass
class Vocabulary:
    index: dict[str, int]
    matrix: np.ndarray  # (V, dim); row pad_index is all zeros
    pad_index: int = 0
    oov_index: int = 1
    warnings: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.oov_index)


def load_pretrained(path, dim: int = EMBED_DIM, seed: int = 0) -> Vocabulary:
    """Parse a GloVe-style text file (``token v1 ... v_dim`` per line).

    Rows 0 and 1 are reserved for padding (zeros) and the shared OOV vector
    (normal, std 0.1, drawn from ``seed``).  Lines with the wrong number of
    values and repeated tokens are skipped; each skip is recorded in
    ``Vocabulary.warnings``.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"cannot read embeddings file {path}: {exc}") from exc

    index: dict[str, int] = {PAD: 0, OOV: 1}
    rows: list[np.ndarray] = []
    warnings: list[str] = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.rstrip().split(" ")
        if not line.strip():
            continue
        if len(parts) != dim + 1:
            warnings.append(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
            continue
        token = parts[0]
        if token in index:
            warnings.append(f"line {lineno}: duplicate token {token!r} ignored")
            continue
        try:
            vec = np.array([float(v) for v in parts[1:]])
        except ValueError:
            warnings.append(f"line {lineno}: non-numeric value")
            continue
        index[token] = len(index)
        rows.append(vec)
    if not rows:
        raise EmbeddingFormatError(f"{path}: no usable {dim}-dim vectors")
    for w in warnings:
        logger.warning("%s: %s", path, w)

    oov = make_rng(seed).normal(0.0, 0.1, size=dim)
    matrix = np.vstack([np.zeros(dim), oov, *rows])
    return Vocabulary(index, matrix, warnings=warnings)


@dataclass
class TokenSequence:
    indices: np.ndarray  # (m_max,) int
    n_valid: int


def encode_tokens(tokens: list[str], vocab: Vocabulary, m_max: int = MAX_TOKENS) -> TokenSequence:
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    kept = tokens[:m_max]
    idx = np.full(m_max, vocab.pad_index, dtype=np.int64)
    idx[:len(kept)] = [vocab.lookup(t) for t in kept]
    return TokenSequence(idx, len(kept))


def embed_sequence(tokens: list[str], vocab: Vocabulary, m_max: int = MAX_TOKENS,
                   table: Tensor | None = None) -> tuple[Tensor, int]:
    """(m_max, dim) embedding rows plus the count of real tokens.

    ``table`` is the trainable copy of ``vocab.matrix`` owned by a model;
    without it the pretrained values are used as constants.
    """
    seq = encode_tokens(tokens, vocab, m_max)
    if table is None:
        table = Tensor(vocab.matrix)
    return embedding(table, seq.indices, frozen_row=vocab.pad_index), seq.n_valid
