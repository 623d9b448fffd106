"""Synthetic four-class speech + transcript corpus.

The class can be carried by the audio (a class-specific tone pattern), by
the transcript (class keywords mixed into filler words), or by both.  A
modality that is switched off is generated independently of the class.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import EMOTIONS
from .data import ManifestRecord, write_manifest
from .features import SAMPLE_RATE, write_wav
from .tensor import make_rng

KEYWORDS = {
    "happy": ("great", "wonderful", "glad", "love", "fantastic"),
    "angry": ("unfair", "furious", "hate", "ridiculous", "outrageous"),
    "sad": ("miss", "lonely", "sorry", "lost", "tears"),
    "neutral": ("okay", "tuesday", "schedule", "report", "usual"),
}
FILLER = (
    "i", "you", "it", "was", "is", "the", "a", "that's", "really", "just", "so", "we",
    "they", "going", "to", "and", "then", "about", "this", "there", "know", "think",
    "what", "well", "yeah", "maybe", "today", "again", "all", "of",
)
# (base pitch Hz, amplitude-modulation rate Hz, pitch slope per second)
TONES = {
    "happy": (330.0, 6.0, 120.0),
    "angry": (520.0, 11.0, 0.0),
    "sad": (180.0, 2.0, -40.0),
    "neutral": (250.0, 0.0, 0.0),
}


@dataclass
class SynthConfig:
    n_per_class: int = 50
    seed: int = 7
    speech_informative: bool = True
    text_informative: bool = True
    snr_db: float = 10.0
    groups: int = 5
    min_seconds: float = 1.0
    max_seconds: float = 2.0
    embed_dim: int = 300


def _tone(label: str, duration: float, rng) -> np.ndarray:
    base, am_rate, slope = TONES[label]
    t = np.arange(int(duration * SAMPLE_RATE)) / SAMPLE_RATE
    f0 = base * rng.uniform(0.95, 1.05) + slope * t
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    wave = np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase)
    if am_rate > 0:
        wave *= 0.6 + 0.4 * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    return wave / np.max(np.abs(wave))


def synth_waveform(label: str | None, duration: float, snr_db: float, rng) -> np.ndarray:
    """Tone pattern of ``label`` plus white noise; ``label=None`` picks the pattern at random."""
    pattern = label if label is not None else EMOTIONS[rng.integers(len(EMOTIONS))]
    signal = _tone(pattern, duration, rng)
    noise = rng.normal(size=signal.size)
    noise *= np.sqrt(np.mean(signal ** 2) / np.mean(noise ** 2) / 10 ** (snr_db / 10))
    wave = signal + noise
    return 0.7 * wave / np.max(np.abs(wave))


def synth_transcript(label: str, informative: bool, rng) -> str:
    words = [FILLER[i] for i in rng.integers(len(FILLER), size=rng.integers(4, 11))]
    if informative:
        pool = KEYWORDS[label]
        for _ in range(rng.integers(1, 3)):
            words.insert(int(rng.integers(len(words) + 1)), pool[rng.integers(len(pool))])
    return " ".join(words)


def vocabulary_words() -> list[str]:
    words = list(FILLER)
    for label in EMOTIONS:
        words += KEYWORDS[label]
    return words


def write_vectors(path, words: list[str], dim: int, rng) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in words:
            vec = rng.normal(0.0, 0.4, size=dim)
            fh.write(w + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


def generate(out_dir, cfg: SynthConfig) -> Path:
    """Write wavs, ``manifest.jsonl``, ``vectors.txt`` and a starter ``gban.cfg``; return the manifest path."""
    if cfg.n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    out = Path(out_dir)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = make_rng(cfg.seed)
    records = []
    for n in range(cfg.n_per_class):
        for label in EMOTIONS:
            uid = f"{label}_{n:04d}"
            duration = rng.uniform(cfg.min_seconds, cfg.max_seconds)
            wave = synth_waveform(label if cfg.speech_informative else None, duration, cfg.snr_db, rng)
            wav_path = wav_dir / f"{uid}.wav"
            write_wav(wav_path, wave)
            text = synth_transcript(label, cfg.text_informative, rng)
            records.append(ManifestRecord(uid, wav_path, text, label, f"g{n % cfg.groups + 1}"))
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, records)
    write_vectors(out / "vectors.txt", vocabulary_words(), cfg.embed_dim, make_rng(cfg.seed + 1))
    (out / "gban.cfg").write_text(
        "manifest = manifest.jsonl\n"
        "embeddings = vectors.txt\n"
        f"embed_dim = {cfg.embed_dim}\n"
        "out_dir = runs\n"
        f"seed = {cfg.seed}\n"
    )
    return manifest
