"""Segment-averaged scoring of whole recordings."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import dsp
from ..data import Dataset
from ..metrics import ScoreEntry, ScoreSet
from ..nn.autograd import Tensor
from ..nn.model import Checkpoint, forward


def segment_features(waveform: np.ndarray) -> np.ndarray:
    """``(n_segments, FRAMES, mel)`` log-mel features of the 30 s segments of a recording."""
    return np.stack([dsp.log_mel(seg) for seg in dsp.segment_30s(waveform).segments])


def _constants(model: Checkpoint) -> dict:
    return {k: Tensor(v) for k, v in model.params.items()}


def score_segments(model: Checkpoint, feats: np.ndarray, P: dict | None = None) -> np.ndarray:
    """Eval-mode scores ``(n_segments, n_tasks)`` for one recording's segment features."""
    P = P if P is not None else _constants(model)
    inputs = {b["name"]: feats for b in model.branches}
    _, _, scores = forward(model, inputs, train=False, P=P)
    return np.stack([scores[t].data for t in model.head_config.tasks], axis=1).astype(np.float64)


def infer_recording(checkpoint: Checkpoint, waveform: np.ndarray) -> tuple[float, float]:
    """Mean of per-segment depression and anxiety scores over all 30 s segments."""
    waveform = np.asarray(waveform)
    if waveform.size < dsp.SEGMENT_SAMPLES:
        raise ValueError(f"input must be at least 30 s, got {waveform.size / dsp.SAMPLE_RATE:.2f} s")
    per_seg = score_segments(checkpoint, segment_features(waveform))
    dep, anx = per_seg.mean(axis=0)
    return float(dep), float(anx)


class SegmentStore:
    """Cached segment features for every recording of a split."""

    def __init__(self, dataset: Dataset, split: str, threads: int = 1):
        self.records = dataset.split(split)

        def load(rec):
            return segment_features(dsp.read_wav(rec.audio_path))

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                self.features = list(pool.map(load, self.records))
        else:
            self.features = [load(r) for r in self.records]

    def __len__(self):
        return len(self.records)

    def score(self, model: Checkpoint, threads: int = 1, per_segment_fn=None) -> ScoreSet:
        """Score every recording; ``per_segment_fn(i, feats)`` may replace the model forward."""
        P = _constants(model)
        fn = per_segment_fn or (lambda i, f: score_segments(model, f, P))

        def one(i):
            return fn(i, self.features[i]).mean(axis=0)

        idx = range(len(self.records))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                means = list(pool.map(one, idx))
        else:
            means = [one(i) for i in idx]
        return ScoreSet([
            ScoreEntry(r.recording_id, r.voice_id, float(m[0]), float(m[1]), r.phq9, r.gad7)
            for r, m in zip(self.records, means)
        ])


def score_dataset(model: Checkpoint, dataset: Dataset, split: str, threads: int = 1) -> ScoreSet:
    return SegmentStore(dataset, split, threads).score(model, threads)
