import math
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gban.errors import AudioFileMissingError, MalformedWavError, SequenceTooShortError, UnsupportedEncodingError
from gban.features import (
    FEATURE_DIM,
    LOG_FLOOR,
    AudioClip,
    build_feature_sequence,
    deltas,
    frame_budget,
    frame_signal,
    load_feature_cache,
    mel_centers,
    mel_filterbank,
    mel_spectrogram,
    mfcc,
    read_wav,
    save_feature_cache,
    write_wav,
)

from conftest import assert_close

SR = 16000


def sine(freq, seconds, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


# ----- independent scalar oracle for the acoustic pipeline -----------------


def oracle_frames(x, length=400, step=160):
    out = []
    n = 0
    while n + length <= len(x):
        out.append([x[n + i] * (0.54 - 0.46 * math.cos(2 * math.pi * i / (length - 1))) for i in range(length)])
        n += step
    return np.array(out)


def oracle_power(frame, n_fft=512):
    padded = list(frame) + [0.0] * (n_fft - len(frame))
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    re = (np.cos(2 * np.pi * k * n / n_fft) * padded).sum(axis=1)
    im = (-np.sin(2 * np.pi * k * n / n_fft) * padded).sum(axis=1)
    return (re ** 2 + im ** 2) / n_fft


def oracle_filters(n_mels=26, n_fft=512, sr=SR):
    top = 2595 * math.log10(1 + (sr / 2) / 700)
    edges = [700 * (10 ** (top * i / (n_mels + 1) / 2595) - 1) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for b in range(n_fft // 2 + 1):
            f = b * sr / n_fft
            if lo <= f <= mid:
                fb[m, b] = (f - lo) / (mid - lo)
            elif mid < f <= hi:
                fb[m, b] = (hi - f) / (hi - mid)
    return fb


def oracle_dct(row, keep=13):
    n = len(row)
    out = []
    for k in range(keep):
        s = sum(row[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out.append(s * math.sqrt((1 if k == 0 else 2) / n))
    return np.array(out)


def oracle_deltas(c, w=2):
    t = len(c)
    out = np.zeros_like(c)
    for i in range(t):
        acc = 0.0
        for n in range(1, w + 1):
            acc = acc + n * (c[min(i + n, t - 1)] - c[max(i - n, 0)])
        out[i] = acc / (2 * sum(n * n for n in range(1, w + 1)))
    return out


class TestAcousticOracle:
    def test_sine_mfcc_matches_naive_pipeline(self):
        x = sine(440.0, 0.1)
        frames = oracle_frames(x)
        fb = oracle_filters()
        log_mel = np.array([[math.log(v + LOG_FLOOR) for v in fb @ oracle_power(f)] for f in frames])
        expected = np.array([oracle_dct(r) for r in log_mel])
        got = mfcc(mel_spectrogram(frame_signal(AudioClip(x, SR))))
        assert got.shape == (8, 13)
        assert_close(got, expected, 1e-8)

    def test_full_feature_row_layout(self):
        x = sine(440.0, 0.1)
        frames = oracle_frames(x)
        fb = oracle_filters()
        log_mel = np.log(np.array([fb @ oracle_power(f) for f in frames]) + LOG_FLOOR)
        ceps = np.array([oracle_dct(r) for r in log_mel])
        seq = build_feature_sequence(AudioClip(x, SR))
        row = seq.frames[:seq.n_valid]
        assert_close(row[:, :26], log_mel, 1e-8)
        assert_close(row[:, 26:39], ceps, 1e-8)
        assert_close(row[:, 39:], oracle_deltas(ceps), 1e-8)

    def test_filterbank_matches_loop_construction(self):
        assert_close(mel_filterbank(), oracle_filters(), 1e-12)


class TestWav:
    def test_silence(self, tmp_path):
        write_wav(tmp_path / "s.wav", np.zeros(SR))
        clip = read_wav(tmp_path / "s.wav")
        assert clip.samples.size == SR and clip.sample_rate == SR
        assert not clip.samples.any()

    def test_full_scale_square(self, tmp_path):
        square = np.where(np.arange(200) % 20 < 10, 1.0, -1.0)
        write_wav(tmp_path / "q.wav", square)
        values = set(read_wav(tmp_path / "q.wav").samples.tolist())
        assert values == {-1.0, 32767 / 32768}

    def test_sine_round_trip(self, tmp_path):
        x = sine(440.0, 0.5, amp=0.9)
        write_wav(tmp_path / "a.wav", x)
        assert np.max(np.abs(read_wav(tmp_path / "a.wav").samples - x)) <= 1 / 32768

    def test_stereo_averaged(self, tmp_path):
        pcm = np.array([[1000, 3000], [-2000, 0]], dtype="<i2")
        with wave.open(str(tmp_path / "st.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(SR)
            wf.writeframes(pcm.tobytes())
        assert_close(read_wav(tmp_path / "st.wav").samples, [2000 / 32768, -1000 / 32768], 1e-15)

    def test_missing(self, tmp_path):
        with pytest.raises(AudioFileMissingError):
            read_wav(tmp_path / "nope.wav")

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00garbage")
        with pytest.raises(MalformedWavError):
            read_wav(tmp_path / "bad.wav")

    def test_unsupported_width(self, tmp_path):
        with wave.open(str(tmp_path / "w8.wav"), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(SR)
            wf.writeframes(bytes(100))
        with pytest.raises(UnsupportedEncodingError):
            read_wav(tmp_path / "w8.wav")

    def test_float_encoding_rejected(self, tmp_path):
        data = np.zeros(10, dtype="<f4").tobytes()
        fmt = struct.pack("<HHIIHH", 3, 1, SR, SR * 4, 4, 32)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
        (tmp_path / "f.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(UnsupportedEncodingError):
            read_wav(tmp_path / "f.wav")

    def test_error_kinds_are_distinct(self):
        kinds = {AudioFileMissingError, MalformedWavError, UnsupportedEncodingError}
        assert len(kinds) == 3
        assert not issubclass(MalformedWavError, UnsupportedEncodingError)


class TestFraming:
    def test_one_second_count(self):
        assert frame_signal(AudioClip(np.zeros(SR), SR)).shape == (98, 400)
        assert 1 + (16000 - 400) // 160 == 98

    def test_hop_equal_to_length_tiles(self):
        x = np.arange(1200.0)
        frames = frame_signal(AudioClip(x, SR), frame_len=0.025, hop=0.025)
        assert_close(frames / np.hamming(400), x.reshape(3, 400), 1e-9)

    def test_constant_signal_is_window(self):
        frames = frame_signal(AudioClip(np.full(800, 0.3), SR))
        for f in frames:
            assert_close(f, 0.3 * np.hamming(400), 1e-15)

    def test_too_short(self):
        with pytest.raises(SequenceTooShortError):
            frame_signal(AudioClip(np.zeros(399), SR))


class TestMel:
    def test_sine_peaks_at_nearest_filter(self):
        log_mel = mel_spectrogram(frame_signal(AudioClip(sine(440.0, 0.2), SR)))
        nearest = np.argmin(np.abs(mel_centers() - 440.0))
        assert np.all(log_mel.argmax(axis=1) == nearest)

    def test_silence_is_log_floor(self):
        log_mel = mel_spectrogram(frame_signal(AudioClip(np.zeros(1000), SR)))
        assert np.all(log_mel == np.log(LOG_FLOOR))

    def test_doubling_amplitude(self):
        x = sine(1000.0, 0.1) + 0.1 * sine(3100.0, 0.1)
        a = mel_spectrogram(frame_signal(AudioClip(x, SR)))
        b = mel_spectrogram(frame_signal(AudioClip(2 * x, SR)))
        # the floor makes the shift inexact only where energy is negligible
        strong = a > 0.0
        assert strong.any()
        assert_close((b - a)[strong], np.full(strong.sum(), np.log(4.0)), 1e-9)

    def test_every_filter_has_support(self):
        assert np.all(mel_filterbank().max(axis=1) > 0)


class TestCepstra:
    def test_constant_row_has_only_c0(self):
        c = mfcc(np.full((1, 26), 3.7))
        assert abs(c[0, 0] - 3.7 * np.sqrt(26)) < 1e-12
        assert np.all(np.abs(c[0, 1:]) < 1e-12)

    def test_random_row_matches_naive_dct(self, rng):
        row = rng.normal(size=26)
        assert_close(mfcc(row[None])[0], oracle_dct(row), 1e-10)

    @settings(max_examples=25)
    @given(st.integers(0, 2 ** 31))
    def test_linearity(self, seed):
        r = np.random.Generator(np.random.PCG64(seed))
        a, b = r.normal(size=(3, 26)), r.normal(size=(3, 26))
        assert_close(mfcc(a + b), mfcc(a) + mfcc(b), 1e-10)


class TestDeltas:
    def test_constant(self):
        assert not deltas(np.full((7, 13), 2.5)).any()

    def test_ramp_interior(self):
        c = np.arange(10.0)[:, None] * np.ones((1, 3))
        assert_close(deltas(c)[2:-2], np.ones((6, 3)), 1e-15)

    def test_random_matches_direct(self, rng):
        c = rng.normal(size=(9, 13))
        assert_close(deltas(c), oracle_deltas(c), 1e-12)

    def test_single_frame(self):
        assert not deltas(np.ones((1, 13))).any()


class TestFeatureSequence:
    def test_budget(self):
        assert frame_budget(7.5) == 748

    def test_long_clip_truncated(self):
        seq = build_feature_sequence(AudioClip(sine(300.0, 10.0), SR))
        assert seq.frames.shape == (748, FEATURE_DIM)
        assert seq.n_valid == 748

    def test_one_second_clip(self):
        seq = build_feature_sequence(AudioClip(sine(300.0, 1.0), SR))
        assert seq.n_valid == 98
        assert seq.frames.shape == (748, 52)
        assert not seq.frames[98:].any()
        assert np.all(np.isfinite(seq.frames))

    def test_resampled_input(self):
        x8 = np.sin(2 * np.pi * 440 * np.arange(8000) / 8000)
        seq = build_feature_sequence(AudioClip(x8, 8000))
        assert seq.n_valid == 98

    @settings(max_examples=15, deadline=None)
    @given(st.integers(400, 20000))
    def test_width_always_52(self, n):
        seq = build_feature_sequence(AudioClip(np.random.default_rng(n).normal(size=n) * 0.1, SR))
        assert seq.frames.shape[1] == 52
        assert seq.n_valid == 1 + (n - 400) // 160
        assert not seq.frames[seq.n_valid:].any()

    def test_cache_round_trip(self, tmp_path):
        seq = build_feature_sequence(AudioClip(sine(500.0, 0.3), SR))
        save_feature_cache(tmp_path / "c.feat", seq)
        back = load_feature_cache(tmp_path / "c.feat")
        assert back.n_valid == seq.n_valid
        assert_close(back.frames, seq.frames.astype(np.float32), 0)

    def test_cache_rejects_bad_header(self, tmp_path):
        (tmp_path / "bad.feat").write_bytes(struct.pack("<III", 5, 10, 52) + bytes(8))
        with pytest.raises(ValueError):
            load_feature_cache(tmp_path / "bad.feat")
