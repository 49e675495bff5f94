"""Voice-paired clip sampling.

For every voice, all of its recordings are concatenated in manifest order.
Voices with at least 60 s get a random 60 s window split into two 30 s
halves; shorter voices get the first and the last 30 s, which overlap by
the least possible amount.

Window starts are drawn on the 10 ms feature hop so that clip features are
row slices of the voice's full log-mel matrix.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import dsp
from ..data import Dataset

CLIP = dsp.SEGMENT_SAMPLES
HOP = dsp.DEFAULT_MEL.hop
FRAMES = dsp.FRAMES_PER_SEGMENT


@dataclass
class PairEntry:
    voice_id: str
    clip_a: np.ndarray
    clip_b: np.ndarray
    phq9: int
    gad7: int
    start_a: int
    start_b: int


@dataclass
class PairBatch:
    entries: list[PairEntry]

    @property
    def size(self) -> int:
        return len(self.entries)


def pair_starts(total: int, rng: np.random.Generator) -> tuple[int, int]:
    """Sample offsets of the two 30 s clips inside a ``total``-sample concatenation."""
    if total < CLIP:
        raise ValueError(f"voice has only {total / dsp.SAMPLE_RATE:.2f} s of audio, need 30 s")
    if total >= 2 * CLIP:
        start = HOP * int(rng.integers(0, (total - 2 * CLIP) // HOP + 1))
        return start, start + CLIP
    return 0, total - CLIP


def voice_waveform(dataset: Dataset, voice_id: str) -> np.ndarray:
    recs = dataset.voice_records(voice_id)
    return np.concatenate([dsp.read_wav(r.audio_path) for r in recs])


def build_pair_batch(dataset: Dataset, n_voices: int, seed: int, split: str = "train") -> PairBatch:
    """Sample ``n_voices`` voices without replacement and cut one clip pair from each."""
    voices = dataset.voices(split)
    if n_voices > len(voices):
        raise ValueError(f"requested {n_voices} voices but split {split!r} has {len(voices)}")
    rng = np.random.default_rng(seed)
    chosen = [voices[i] for i in rng.choice(len(voices), n_voices, replace=False)]
    entries = []
    for vid in chosen:
        wav = voice_waveform(dataset, vid)
        a, b = pair_starts(wav.size, rng)
        rec = dataset.voice_records(vid)[0]
        entries.append(PairEntry(vid, wav[a:a + CLIP], wav[b:b + CLIP], rec.phq9, rec.gad7, a, b))
    return PairBatch(entries)


class ClipStore:
    """Log-mel features of each voice's concatenated audio, for fast clip lookup."""

    def __init__(self, dataset: Dataset, split: str, threads: int = 1):
        self.voices = dataset.voices(split)
        self.labels = {}
        for v in self.voices:
            rec = dataset.voice_records(v, split)[0]
            self.labels[v] = (rec.phq9, rec.gad7)
        self.total: dict[str, int] = {}
        self.frames: dict[str, np.ndarray] = {}
        self.tail: dict[str, np.ndarray] = {}

        def load(v):
            wav = voice_waveform(dataset, v)
            if wav.size < CLIP:
                raise ValueError(f"voice {v} has less than 30 s of audio")
            tail = dsp.log_mel(wav[-CLIP:]) if (wav.size - CLIP) % HOP else None
            return v, wav.size, dsp.log_mel(wav), tail

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(load, self.voices))
        else:
            results = [load(v) for v in self.voices]
        for v, total, frames, tail in results:
            self.total[v] = total
            self.frames[v] = frames
            if tail is not None:
                self.tail[v] = tail

    def __len__(self):
        return len(self.voices)

    def clip_features(self, voice_id: str, start: int) -> np.ndarray:
        if start % HOP == 0:
            f = start // HOP
            return self.frames[voice_id][f:f + FRAMES]
        if start == self.total[voice_id] - CLIP:
            return self.tail[voice_id]
        raise ValueError(f"clip start {start} is off the hop grid")

    def sample_pairs(self, voices, rng) -> np.ndarray:
        """Stacked ``(len(voices), 2, FRAMES, mel)`` features for one clip pair per voice."""
        out = []
        for v in voices:
            a, b = pair_starts(self.total[v], rng)
            out.append(np.stack([self.clip_features(v, a), self.clip_features(v, b)]))
        return np.stack(out)

    def label_arrays(self, voices):
        y = np.array([self.labels[v] for v in voices])
        return {"depression": y[:, 0], "anxiety": y[:, 1]}


def epoch_batches(voices, batch_voices: int, rng) -> list[list[str]]:
    """Shuffle voices and cut them into consecutive batches (the last may be short)."""
    perm = rng.permutation(len(voices))
    order = [voices[i] for i in perm]
    return [order[i:i + batch_voices] for i in range(0, len(order), batch_voices)]


def effective_batch_voices(requested: int, n_voices: int, floor: int = 8) -> int:
    """Shrink the batch for small corpora so an epoch still has about four steps."""
    if n_voices >= 4 * requested:
        return requested
    return max(1, min(n_voices, max(floor, n_voices // 4)))
