"""Audio I/O, log-mel features and fixed-length segmentation.

Frames are computed on a 10 ms hop. Because every frame depends only on
the samples it covers, the features of any sub-clip that starts on the hop
grid are a row slice of the features of the full signal; the training code
relies on this.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16_000
SEGMENT_SECONDS = 30
SEGMENT_SAMPLES = SAMPLE_RATE * SEGMENT_SECONDS
LOG_FLOOR = 1e-10


class AudioFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MelParams:
    window: int = 400
    hop: int = 160
    n_fft: int = 512
    mel_bins: int = 40
    fmin: float = 0.0
    fmax: float = 8000.0


DEFAULT_MEL = MelParams()
FRAMES_PER_SEGMENT = 1 + (SEGMENT_SAMPLES - DEFAULT_MEL.window) // DEFAULT_MEL.hop


@dataclass
class SegmentSet:
    segments: list[np.ndarray]
    pad_samples_last: int

    def __len__(self):
        return len(self.segments)


# --------------------------------------------------------------------- WAV I/O


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz mono PCM16 WAV as float samples in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE" or w.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: only 16-bit PCM is supported")
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: mono required, got {w.getnchannels()} channels")
            if w.getframerate() != SAMPLE_RATE:
                raise AudioFormatError(f"{path}: unsupported sample rate {w.getframerate()}")
            n = w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: {exc}") from None
    if len(raw) != 2 * n:
        raise AudioFormatError(f"{path}: truncated file ({len(raw)} of {2 * n} bytes)")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples: np.ndarray) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ValueError("non-finite samples")
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# ---------------------------------------------------------------- segmentation


def segment_30s(waveform: np.ndarray) -> SegmentSet:
    """Cut into consecutive 30 s segments, zero-padding the last one."""
    x = np.asarray(waveform)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("expected a non-empty 1-D waveform")
    n_seg = -(-x.size // SEGMENT_SAMPLES)
    pad = n_seg * SEGMENT_SAMPLES - x.size
    padded = np.concatenate([x, np.zeros(pad, dtype=x.dtype)]) if pad else x
    segments = [padded[i * SEGMENT_SAMPLES:(i + 1) * SEGMENT_SAMPLES] for i in range(n_seg)]
    return SegmentSet(segments, pad)


# --------------------------------------------------------------------- log-mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(params: MelParams = DEFAULT_MEL) -> np.ndarray:
    """The ``mel_bins + 2`` edge frequencies (Hz); band ``i`` peaks at edge ``i + 1``."""
    mels = np.linspace(hz_to_mel(params.fmin), hz_to_mel(params.fmax), params.mel_bins + 2)
    return mel_to_hz(mels)


def mel_centers(params: MelParams = DEFAULT_MEL) -> np.ndarray:
    return mel_band_edges(params)[1:-1]


def mel_filterbank(params: MelParams = DEFAULT_MEL) -> np.ndarray:
    """Triangular HTK-mel filters of unit area, shape ``(mel_bins, n_fft // 2 + 1)``."""
    edges = mel_band_edges(params)
    freqs = np.arange(params.n_fft // 2 + 1) * SAMPLE_RATE / params.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (hi - lo))


_FB_CACHE: dict[MelParams, np.ndarray] = {}


def _window(n):
    # periodic Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_frames(n_samples: int, params: MelParams = DEFAULT_MEL) -> int:
    return 1 + (n_samples - params.window) // params.hop


def log_mel(waveform: np.ndarray, params: MelParams = DEFAULT_MEL, dtype=np.float32) -> np.ndarray:
    """Log-mel magnitude spectrogram, shape ``(T, mel_bins)``.

    ``T = 1 + (N - window) // hop``; no centering, pre-emphasis or
    normalization. Entries are ``log(max(mel_energy, 1e-10))``.
    """
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D waveform")
    if x.size < params.window:
        raise ValueError(f"input shorter than one window ({x.size} < {params.window} samples)")
    fb = _FB_CACHE.get(params)
    if fb is None:
        fb = _FB_CACHE[params] = mel_filterbank(params)
    T = n_frames(x.size, params)
    win = _window(params.window)
    out = np.empty((T, params.mel_bins), dtype=dtype)
    # chunked to bound memory on long inputs
    chunk = 4096
    frames_all = np.lib.stride_tricks.sliding_window_view(x, params.window)[:: params.hop]
    for start in range(0, T, chunk):
        frames = frames_all[start:start + chunk] * win
        mag = np.abs(np.fft.rfft(frames, n=params.n_fft, axis=1))
        mel = mag @ fb.T
        out[start:start + chunk] = np.log(np.maximum(mel, LOG_FLOOR))
    return out


# --------------------------------------------------------------- feature cache


def write_fbank(path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    T, M = feats.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", T, M))
        fh.write(feats.tobytes())


def read_fbank(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise AudioFormatError(f"{path}: truncated feature header")
        T, M = struct.unpack("<II", header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != T * M:
        raise AudioFormatError(f"{path}: expected {T * M} values, found {data.size}")
    return data.reshape(T, M).astype(np.float32)
