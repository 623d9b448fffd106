"""Acoustic front end: 16-bit PCM WAV in, 52-dim frame sequence out.

Each frame is ``[26 log-mel | 13 MFCC | 13 delta-MFCC]``.  Utterances are cut
at 7.5 s and zero-padded to a fixed frame budget.
"""

from __future__ import annotations

import struct
import wave
from math import gcd
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct
from scipy.signal import resample_poly

from .errors import (
    AudioFileMissingError,
    MalformedWavError,
    SequenceTooShortError,
    ShapeError,
    UnsupportedEncodingError,
)

SAMPLE_RATE = 16000
FRAME_LEN = 0.025
HOP = 0.010
N_FFT = 512
N_MELS = 26
N_MFCC = 13
DELTA_WINDOW = 2
LOG_FLOOR = 1e-10
MAX_SECONDS = 7.5
FEATURE_DIM = N_MELS + 2 * N_MFCC


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ShapeError("audio clip must be a non-empty mono signal")
        if self.sample_rate <= 0:
            raise ValueError(f"bad sample rate {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FrameSequence:
    frames: np.ndarray  # (budget, 52)
    n_valid: int
    frame_period: float = HOP

    @property
    def budget(self) -> int:
        return self.frames.shape[0]


# --------------------------------------------------------------------------
# WAV i/o
# --------------------------------------------------------------------------


def read_wav(path) -> AudioClip:
    """Decode 16-bit PCM RIFF/WAVE; multi-channel input is averaged to mono."""
    path = Path(path)
    if not path.is_file():
        raise AudioFileMissingError(f"no such audio file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            width = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise MalformedWavError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise MalformedWavError(f"{path}: truncated header ({exc})") from exc
    if width != 2:
        raise UnsupportedEncodingError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    data = np.frombuffer(raw, dtype="<i2")
    if data.size == 0 or data.size % channels:
        raise MalformedWavError(f"{path}: empty or misaligned sample data")
    samples = data.reshape(-1, channels).astype(np.float64).mean(axis=1) / 32768.0
    return AudioClip(samples, rate)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    """Write a mono 16-bit PCM WAV; samples are expected in [-1, 1]."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.astype("<i2").tobytes())


# --------------------------------------------------------------------------
# DSP stages
# --------------------------------------------------------------------------


def resample(clip: AudioClip, rate: int = SAMPLE_RATE) -> AudioClip:
    if clip.sample_rate == rate:
        return clip
    g = gcd(rate, clip.sample_rate)
    return AudioClip(resample_poly(clip.samples, rate // g, clip.sample_rate // g), rate)


def frame_signal(clip: AudioClip, frame_len: float = FRAME_LEN, hop: float = HOP) -> np.ndarray:
    """Hamming-windowed frames, shape (n_frames, L); the final partial frame is dropped."""
    if not frame_len >= hop > 0:
        raise ValueError(f"need frame_len >= hop > 0, got {frame_len}, {hop}")
    length = int(round(frame_len * clip.sample_rate))
    step = int(round(hop * clip.sample_rate))
    n = clip.samples.size
    if n < length:
        raise SequenceTooShortError(f"clip has {n} samples, a frame needs {length}")
    count = 1 + (n - length) // step
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, length)[::step][:count]
    return frames * np.hamming(length)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(n_mels: int = N_MELS, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular filters on the exact bin frequencies, shape (n_mels, n_fft//2 + 1).

    Triangles are evaluated at each bin's frequency rather than snapped to
    integer bins, so narrow low-frequency filters never collapse.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames: np.ndarray, n_fft: int = N_FFT) -> np.ndarray:
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=-1)) ** 2 / n_fft


def mel_spectrogram(frames: np.ndarray, n_mels: int = N_MELS, n_fft: int = N_FFT,
                    sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Log mel energies, shape (n_frames, n_mels)."""
    frames = np.atleast_2d(frames)
    if frames.shape[0] == 0:
        raise SequenceTooShortError("no frames")
    fb = mel_filterbank(n_mels, n_fft, sample_rate)
    return np.log(power_spectrum(frames, n_fft) @ fb.T + LOG_FLOOR)


def mfcc(log_mel: np.ndarray, n_ceps: int = N_MFCC) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel row, first ``n_ceps`` coefficients."""
    return dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho", axis=-1)[..., :n_ceps]


def deltas(coeffs: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over time (axis 0) with edge frames replicated."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.shape[0] == 0:
        raise SequenceTooShortError("deltas need at least one frame")
    t = c.shape[0]
    padded = np.concatenate([np.repeat(c[:1], window, axis=0), c, np.repeat(c[-1:], window, axis=0)])
    out = np.zeros_like(c)
    for n in range(1, window + 1):
        out += n * (padded[window + n:window + n + t] - padded[window - n:window - n + t])
    return out / (2.0 * sum(n * n for n in range(1, window + 1)))


def frame_budget(max_seconds: float = MAX_SECONDS, sample_rate: int = SAMPLE_RATE,
                 frame_len: float = FRAME_LEN, hop: float = HOP) -> int:
    n = int(round(max_seconds * sample_rate))
    length = int(round(frame_len * sample_rate))
    step = int(round(hop * sample_rate))
    return 1 + (n - length) // step


def build_feature_sequence(clip: AudioClip, max_seconds: float = MAX_SECONDS) -> FrameSequence:
    clip = resample(clip, SAMPLE_RATE)
    budget = frame_budget(max_seconds)
    cap = int(round(max_seconds * SAMPLE_RATE))
    if clip.samples.size > cap:
        clip = AudioClip(clip.samples[:cap], clip.sample_rate)
    frames = frame_signal(clip)
    log_mel = mel_spectrogram(frames)
    ceps = mfcc(log_mel)
    feats = np.concatenate([log_mel, ceps, deltas(ceps)], axis=1)
    n_valid = min(feats.shape[0], budget)
    out = np.zeros((budget, FEATURE_DIM))
    out[:n_valid] = feats[:n_valid]
    return FrameSequence(out, n_valid)


# --------------------------------------------------------------------------
# feature cache blobs
# --------------------------------------------------------------------------

_CACHE_HEADER = struct.Struct("<III")


def save_feature_cache(path, seq: FrameSequence) -> None:
    """Header ``{n_valid, budget, dim}`` as u32 LE, then row-major f32 LE payload."""
    budget, dim = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(seq.n_valid, budget, dim))
        fh.write(seq.frames.astype("<f4").tobytes())


def load_feature_cache(path) -> FrameSequence:
    blob = Path(path).read_bytes()
    if len(blob) < _CACHE_HEADER.size:
        raise ValueError(f"{path}: truncated feature cache")
    n_valid, budget, dim = _CACHE_HEADER.unpack_from(blob)
    payload = np.frombuffer(blob, dtype="<f4", offset=_CACHE_HEADER.size)
    if payload.size != budget * dim or dim != FEATURE_DIM or n_valid > budget:
        raise ValueError(f"{path}: inconsistent feature cache header")
    return FrameSequence(payload.astype(np.float64).reshape(budget, dim), int(n_valid))
