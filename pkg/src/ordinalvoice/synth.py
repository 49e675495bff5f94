"""Synthetic speech corpus whose prosody tracks a latent severity.

Each voice draws a severity in [0, 1]. Pitch falls, jitter and pausing
rise and amplitude modulation flattens as severity grows. Labels are
derived from the same severity, so a model can learn the relation from
audio alone. Nothing here models real phonetics.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .data import LabeledRecording, split_disjoint, write_manifest

LEX_DIM = 16

# severity -> biomarker maps: value = intercept + slope * severity
F0 = (150.0, -40.0)
JITTER = (0.02, 0.10)
PAUSE = (0.10, 0.25)
AM_DEPTH = (0.5, -0.3)
RATE = (4.5, -1.5)
# anxiety latent u -> harmonic roll-off exponent (amplitude of harmonic h is h**-tilt)
TILT = (1.6, -1.2)


@dataclass(frozen=True)
class VoiceProfile:
    severity: float
    f0_base: float
    jitter_amp: float
    pause_fraction: float
    am_depth: float
    speaking_rate: float
    seed: int
    spectral_tilt: float = 1.0


@dataclass
class CorpusConfig:
    n_voices: int = 100
    recordings_per_voice: int = 1
    duration_range: tuple[float, float] = (35.0, 90.0)
    label_noise_sd: float = 0.0
    gad_mixing: float = 0.85
    master_seed: int = 0
    voice_noise: float = 0.05
    lexical_noise: float = 0.25
    split_ratios: tuple[float, float, float] = (0.68, 0.17, 0.15)

    def __post_init__(self):
        self.duration_range = tuple(float(x) for x in self.duration_range)
        self.split_ratios = tuple(float(x) for x in self.split_ratios)
        lo, hi = self.duration_range
        if lo < 30.0 or hi < lo:
            raise ValueError(f"duration_range must satisfy 30 <= min <= max, got {self.duration_range}")
        if self.recordings_per_voice < 1:
            raise ValueError("recordings_per_voice must be >= 1")
        if self.label_noise_sd < 0 or not 0.0 <= self.gad_mixing <= 1.0:
            raise ValueError("label_noise_sd must be >= 0 and gad_mixing in [0, 1]")

    @classmethod
    def from_json(cls, path) -> "CorpusConfig":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFF for k in key])


# stream tags keep the per-purpose generators independent
_PROFILE, _LABELS, _AUDIO, _DURATION, _LEXICAL = 1, 2, 3, 4, 5


def voice_label_seed(master_seed: int, voice_index: int) -> int:
    return int(_rng(master_seed, voice_index, _LABELS).integers(2**31))


def sample_voice_profile(master_seed: int, voice_index: int, severity: float | None = None,
                         voice_noise: float = 0.05, anxiety_u: float | None = None) -> VoiceProfile:
    """Draw a voice's severity and its biomarkers.

    ``voice_noise`` is the per-field Gaussian noise as a fraction of that
    field's range. Passing ``severity`` pins it instead of drawing
    uniformly; the noise draws are unchanged. Spectral tilt follows the
    voice's anxiety latent ``u`` (by default the one its labels use).
    """
    rng = _rng(master_seed, voice_index, _PROFILE)
    drawn = rng.uniform()
    sev = drawn if severity is None else float(severity)
    noise = rng.standard_normal(6) * voice_noise
    u = anxiety_latent(voice_label_seed(master_seed, voice_index)) if anxiety_u is None else float(anxiety_u)

    def mapped(spec, z, x=None):
        a, b = spec
        return a + b * (sev if x is None else x) + z * abs(b)

    return VoiceProfile(
        severity=sev,
        f0_base=float(np.clip(mapped(F0, noise[0]), 60.0, 300.0)),
        jitter_amp=float(np.clip(mapped(JITTER, noise[1]), 0.0, 1.0)),
        pause_fraction=float(np.clip(mapped(PAUSE, noise[2]), 0.0, 0.9)),
        am_depth=float(np.clip(mapped(AM_DEPTH, noise[3]), 0.0, 0.9)),
        speaking_rate=float(np.clip(mapped(RATE, noise[4]), 1.0, 8.0)),
        seed=int(rng.integers(2**31)),
        spectral_tilt=float(np.clip(mapped(TILT, noise[5], u), 0.0, 3.0)),
    )


def anxiety_latent(seed: int) -> float:
    """The voice-specific anxiety component, independent of severity."""
    return float(_rng(seed, _LABELS).uniform())


def labels_from_severity(severity: float, label_noise_sd: float = 0.0, gad_mixing: float = 0.85,
                         seed: int = 0) -> tuple[int, int]:
    """Map severity to (PHQ-9, GAD-7) totals.

    The anxiety latent mixes severity with an independent uniform ``u``
    using weights ``m`` and ``sqrt(1 - m**2)`` renormalized to [0, 1], so
    that before rounding its correlation with severity is exactly ``m``.
    Label noise has standard deviation ``label_noise_sd`` times the scale
    maximum (27 or 21).
    """
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must lie in [0, 1], got {severity}")
    rng = _rng(seed, _LABELS)
    u = rng.uniform()
    e1, e2 = rng.standard_normal(2) * label_noise_sd
    m = gad_mixing
    c = math.sqrt(max(0.0, 1.0 - m * m))
    anx = (m * severity + c * u) / (m + c) if m + c > 0 else u
    phq = int(np.clip(np.round(27.0 * severity + 27.0 * e1), 0, 27))
    gad = int(np.clip(np.round(21.0 * anx + 21.0 * e2), 0, 21))
    return phq, gad


def _phrase_layout(n: int, pause_fraction: float, rng) -> list[tuple[int, int, bool]]:
    """Split ``n`` samples into alternating (start, length, voiced) runs."""
    n_pause = int(round(pause_fraction * n))
    n_voiced = n - n_pause
    n_phrases = max(1, int(round(n / dsp.SAMPLE_RATE / 3.0)))
    voiced = np.diff(np.round(np.concatenate([[0], np.cumsum(rng.dirichlet(np.full(n_phrases, 4.0)))]) * n_voiced))
    if n_pause > 0:
        gaps = np.diff(np.round(np.concatenate([[0], np.cumsum(rng.dirichlet(np.full(n_phrases, 4.0)))]) * n_pause))
    else:
        gaps = np.zeros(n_phrases)
    runs, pos = [], 0
    for v, g in zip(voiced.astype(int), gaps.astype(int)):
        for length, is_voiced in ((v, True), (g, False)):
            if length > 0:
                runs.append((pos, length, is_voiced))
                pos += length
    if pos != n:  # rounding slack goes to the last run
        s, length, v = runs[-1]
        runs[-1] = (s, length + n - pos, v)
    return runs


def _jittered_phase(n: int, f0: float, jitter: float, rng) -> np.ndarray:
    """Phase track (radians) whose periods are ``(1 + jitter * xi) / f0``, xi ~ U(-1, 1)."""
    mean_period = dsp.SAMPLE_RATE / f0
    n_periods = int(n / (mean_period * (1.0 - jitter)) + 3) if jitter < 1 else int(n + 3)
    periods = mean_period * (1.0 + jitter * rng.uniform(-1.0, 1.0, n_periods))
    periods = np.maximum(periods, 1.0)
    boundaries = np.concatenate([[0.0], np.cumsum(periods)])
    t = np.arange(n, dtype=np.float64)
    k = np.searchsorted(boundaries, t, side="right") - 1
    frac = (t - boundaries[k]) / periods[k]
    return 2.0 * np.pi * (k + frac)


def synthesize_utterance(profile: VoiceProfile, duration: float, seed: int = 0, n_harmonics: int = 8) -> np.ndarray:
    """Render a 16 kHz utterance of ``duration`` seconds for ``profile``."""
    if duration < 30.0:
        raise ValueError(f"duration must be >= 30 s, got {duration}")
    n = int(round(duration * dsp.SAMPLE_RATE))
    rng = _rng(profile.seed, seed, _AUDIO)
    out = np.zeros(n)
    ramp = int(0.01 * dsp.SAMPLE_RATE)
    amps = np.arange(1, n_harmonics + 1, dtype=np.float64) ** -profile.spectral_tilt
    for start, length, voiced in _phrase_layout(n, profile.pause_fraction, rng):
        if not voiced:
            continue
        phase = _jittered_phase(length, profile.f0_base, profile.jitter_amp, rng)
        tone = np.zeros(length)
        for h, a in enumerate(amps, 1):
            if h * profile.f0_base < 0.45 * dsp.SAMPLE_RATE:
                tone += a * np.sin(h * phase)
        t = np.arange(length) / dsp.SAMPLE_RATE
        offset = rng.uniform(0, 2 * np.pi)
        env = 1.0 - profile.am_depth * 0.5 * (1.0 - np.cos(2 * np.pi * profile.speaking_rate * t + offset))
        r = min(ramp, length // 2)
        if r > 0:
            fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
            env[:r] *= fade
            env[length - r:] *= fade[::-1]
        out[start:start + length] = tone * env
    return 0.6 * out / amps.sum()


_LEX_MIX = _rng(20240601, 0).standard_normal((LEX_DIM, 2))
_LEX_OFFSET = _rng(20240601, 1).standard_normal(LEX_DIM) * 0.5


def lexical_vector(severity: float, anxiety_u: float, noise: float, seed: int) -> np.ndarray:
    """Noisy affine image of (severity, u): a stand-in for transcript embeddings."""
    z = np.array([severity - 0.5, anxiety_u - 0.5]) * 2.0
    eps = _rng(seed, _LEXICAL).standard_normal(LEX_DIM) * noise
    return (_LEX_MIX @ z + _LEX_OFFSET + eps).astype(np.float32)


def write_lex(path, vec: np.ndarray) -> None:
    np.asarray(vec, dtype="<f4").tofile(path)


def read_lex(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").astype(np.float32)


def lex_path(audio_path) -> Path:
    return Path(audio_path).with_suffix(".lex")


def _render(job):
    profile, duration, rec_seed, wav_path, lex, write = job
    wav = synthesize_utterance(profile, duration, seed=rec_seed)
    if write:
        dsp.write_wav(wav_path, wav)
        write_lex(lex_path(wav_path), lex)


def _voice(config: CorpusConfig, v: int):
    label_seed = voice_label_seed(config.master_seed, v)
    u = anxiety_latent(label_seed)
    profile = sample_voice_profile(config.master_seed, v, voice_noise=config.voice_noise, anxiety_u=u)
    labels = labels_from_severity(profile.severity, config.label_noise_sd, config.gad_mixing, label_seed)
    return profile, u, labels


def corpus_labels(config: CorpusConfig) -> np.ndarray:
    """``(n_voices, 2)`` PHQ-9 and GAD-7 totals exactly as :func:`generate_corpus` assigns them, without audio."""
    return np.array([_voice(config, v)[2] for v in range(config.n_voices)], dtype=np.int64)


def generate_corpus(config: CorpusConfig, out_dir, threads: int = 1) -> Path:
    """Write WAVs, ``.lex`` sidecars and ``manifest.jsonl``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records, jobs = [], []
    lo, hi = config.duration_range
    for v in range(config.n_voices):
        profile, u, (phq, gad) = _voice(config, v)
        voice_id = f"v{v:05d}"
        for r in range(config.recordings_per_voice):
            drng = _rng(config.master_seed, v, r, _DURATION)
            duration = round(float(drng.uniform(lo, hi)) * dsp.SAMPLE_RATE) / dsp.SAMPLE_RATE
            rec_seed = int(drng.integers(2**31))
            wav_path = out_dir / f"{voice_id}_r{r}.wav"
            lex = lexical_vector(profile.severity, u, config.lexical_noise, rec_seed)
            meta = {"severity": profile.severity, "f0_base": profile.f0_base, "duration": duration}
            records.append(LabeledRecording(voice_id, wav_path, phq, gad, None, meta))
            jobs.append((profile, duration, rec_seed, wav_path, lex, True))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(_render, jobs))
    else:
        for job in jobs:
            _render(job)

    dataset = split_disjoint(records, config.split_ratios, seed=config.master_seed)
    manifest = write_manifest(dataset, out_dir / "manifest.jsonl")
    with open(out_dir / "corpus_config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
    return manifest
