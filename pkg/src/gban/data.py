"""Manifests, utterance loading, feature caching and batching."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import EMOTIONS
from .errors import ContractError, ManifestError
from .features import (
    FrameSequence,
    build_feature_sequence,
    load_feature_cache,
    read_wav,
    save_feature_cache,
)
from .model import Batch
from .text import TokenSequence, Vocabulary, encode_tokens, tokenize

logger = logging.getLogger(__name__)

LABELS = {name: n for n, name in enumerate(EMOTIONS)}
CACHE_ENV = "GBAN_CACHE"


@dataclass
class ManifestRecord:
    id: str
    wav_path: Path
    transcript: str
    label: str
    group: str | None = None


@dataclass
class UtteranceSample:
    id: str
    frames: FrameSequence
    tokens: TokenSequence
    label: int
    group: str | None = None


def load_manifest(path) -> list[ManifestRecord]:
    """Parse and validate a JSONL manifest; relative wav paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
        missing = [k for k in ("id", "wav_path", "transcript", "label") if k not in obj]
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing fields {missing}")
        uid = str(obj["id"])
        if uid in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {uid!r}")
        if obj["label"] not in LABELS:
            raise ManifestError(f"{path}:{lineno}: label {obj['label']!r} not in {list(EMOTIONS)}")
        seen.add(uid)
        wav = Path(obj["wav_path"])
        if not wav.is_absolute():
            wav = path.parent / wav
        group = obj.get("group")
        records.append(ManifestRecord(uid, wav, str(obj["transcript"]), obj["label"],
                                      None if group is None else str(group)))
    if not records:
        raise ManifestError(f"{path}: no records")
    return records


def write_manifest(path, records: Sequence[ManifestRecord]) -> None:
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            try:
                wav = r.wav_path.relative_to(base)
            except ValueError:
                wav = r.wav_path
            obj = {"id": r.id, "wav_path": wav.as_posix(), "transcript": r.transcript,
                   "label": r.label, "group": r.group}
            fh.write(json.dumps(obj) + "\n")


def missing_audio(records: Sequence[ManifestRecord]) -> list[str]:
    return [r.id for r in records if not r.wav_path.is_file()]


def _cached_features(wav: Path, max_seconds: float, cache_dir: Path | None) -> FrameSequence:
    if cache_dir is None:
        return build_feature_sequence(read_wav(wav), max_seconds)
    digest = hashlib.sha1(wav.read_bytes() + repr(max_seconds).encode()).hexdigest()
    blob = cache_dir / f"{digest}.feat"
    if blob.is_file():
        return load_feature_cache(blob)
    seq = build_feature_sequence(read_wav(wav), max_seconds)
    cache_dir.mkdir(parents=True, exist_ok=True)
    save_feature_cache(blob, seq)
    # hand back the stored precision so hits and misses give identical features
    return FrameSequence(seq.frames.astype(np.float32).astype(np.float64), seq.n_valid)


def load_samples(records: Sequence[ManifestRecord], vocab: Vocabulary, max_seconds: float,
                 max_tokens: int) -> list[UtteranceSample]:
    """Extract features and token indices for every record.

    When ``GBAN_CACHE`` names a directory, features are read from / written to
    per-utterance cache blobs there (stored as float32).
    """
    cache = os.environ.get(CACHE_ENV)
    cache_dir = Path(cache) if cache else None
    samples = []
    for r in records:
        frames = _cached_features(r.wav_path, max_seconds, cache_dir)
        tokens = encode_tokens(tokenize(r.transcript), vocab, max_tokens)
        samples.append(UtteranceSample(r.id, frames, tokens, LABELS[r.label], r.group))
    return samples


def make_batch(samples: Sequence[UtteranceSample], norm: tuple[np.ndarray, np.ndarray] | None = None) -> Batch:
    """Stack samples; ``norm`` = (mean, std) standardises valid frames only."""
    frames = np.stack([s.frames.frames for s in samples])
    n_frames = np.array([s.frames.n_valid for s in samples], dtype=np.int64)
    if norm is not None:
        mean, std = norm
        valid = (np.arange(frames.shape[1])[None, :] < n_frames[:, None])[..., None]
        frames = np.where(valid, (frames - mean) / std, 0.0)
    return Batch(
        frames=frames,
        n_frames=n_frames,
        tokens=np.stack([s.tokens.indices for s in samples]),
        n_tokens=np.array([s.tokens.n_valid for s in samples], dtype=np.int64),
        labels=np.array([s.label for s in samples], dtype=np.int64),
    )


def feature_stats(samples: Sequence[UtteranceSample]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std over all valid frames."""
    rows = np.concatenate([s.frames.frames[:s.frames.n_valid] for s in samples])
    std = rows.std(axis=0)
    return rows.mean(axis=0), np.where(std > 1e-8, std, 1.0)


def stratified_split(labels: Sequence[int], fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """(kept, held_out) index arrays; each class contributes round(fraction * n_c), at least one."""
    labels = np.asarray(labels)
    held = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        n = max(1, int(round(fraction * members.size))) if fraction > 0 else 0
        held.extend(members[:min(n, members.size - 1)].tolist())
    held_idx = np.array(sorted(held), dtype=np.int64)
    kept = np.setdiff1d(np.arange(labels.size), held_idx)
    return kept, held_idx


def random_split(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """(kept, held_out) with max(1, round(fraction * n)) held out."""
    order = rng.permutation(n)
    k = min(n - 1, max(1, int(round(fraction * n))))
    return np.sort(order[k:]), np.sort(order[:k])


def group_folds(groups: Sequence[str | None], k: int) -> list[np.ndarray]:
    """Test-index arrays for k folds; sorted distinct groups go to fold ``rank % k``."""
    if any(g is None for g in groups):
        raise ManifestError("k-fold needs a group id on every manifest record")
    distinct = sorted(set(groups))
    if k < 2 or len(distinct) < k:
        raise ContractError(f"k-fold with k={k} needs at least k distinct groups, got {len(distinct)}")
    fold_of = {g: n % k for n, g in enumerate(distinct)}
    assign = np.array([fold_of[g] for g in groups])
    return [np.flatnonzero(assign == f) for f in range(k)]
