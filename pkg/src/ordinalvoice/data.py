"""Labeled recordings, JSONL manifests and speaker-disjoint splits."""

from __future__ import annotations

import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "validation", "test")
MAX_LABEL = {"depression": 27, "anxiety": 21}
MIN_DURATION_S = 30.0
SAMPLE_RATE = 16_000


class ManifestError(ValueError):
    """Raised when a manifest or a set of records violates a dataset invariant."""


@dataclass(frozen=True)
class TaskLabel:
    task: str
    value: int

    def __post_init__(self):
        if self.task not in MAX_LABEL:
            raise ValueError(f"unknown task {self.task!r}")
        if not 0 <= self.value <= self.max_value:
            raise ValueError(f"label out of range: {self.task}={self.value}")

    @property
    def max_value(self) -> int:
        return MAX_LABEL[self.task]


@dataclass
class LabeledRecording:
    voice_id: str
    audio_path: Path
    phq9: int
    gad7: int
    split: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def recording_id(self) -> str:
        return Path(self.audio_path).stem

    def label(self, task: str) -> int:
        return self.phq9 if task == "depression" else self.gad7

    def to_json(self, root: Path | None = None) -> dict:
        path = Path(self.audio_path)
        if root is not None:
            try:
                path = path.relative_to(root)
            except ValueError:
                pass
        rec = {
            "voice_id": self.voice_id,
            "audio_path": path.as_posix(),
            "phq9": self.phq9,
            "gad7": self.gad7,
            "split": self.split,
        }
        rec.update(self.meta)
        return rec


class Dataset:
    """A validated collection of recordings with a per-split voice index.

    Recordings of a voice keep their manifest order, which is the order
    used when a voice's audio is concatenated for pair batches.
    """

    def __init__(self, records: Sequence[LabeledRecording]):
        self.records = list(records)
        validate_records(self.records)
        self._by_split: dict[str, dict[str, list[LabeledRecording]]] = {s: {} for s in SPLITS}
        for rec in self.records:
            self._by_split[rec.split].setdefault(rec.voice_id, []).append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def voices(self, split: str | None = None) -> list[str]:
        if split is None:
            return list(dict.fromkeys(r.voice_id for r in self.records))
        return list(self._by_split[split])

    def voice_records(self, voice_id: str, split: str | None = None) -> list[LabeledRecording]:
        splits = [split] if split else SPLITS
        for s in splits:
            if voice_id in self._by_split[s]:
                return self._by_split[s][voice_id]
        raise KeyError(voice_id)

    def split(self, name: str) -> list[LabeledRecording]:
        return [r for r in self.records if r.split == name]

    def voice_split(self, voice_id: str) -> str:
        for s in SPLITS:
            if voice_id in self._by_split[s]:
                return s
        raise KeyError(voice_id)


def validate_records(records: Iterable[LabeledRecording]) -> None:
    seen: dict[str, tuple[int, int, str]] = {}
    for rec in records:
        if rec.split not in SPLITS:
            raise ManifestError(f"unknown split {rec.split!r} for voice {rec.voice_id}")
        for task, value in (("depression", rec.phq9), ("anxiety", rec.gad7)):
            if not isinstance(value, (int, np.integer)) or not 0 <= value <= MAX_LABEL[task]:
                raise ManifestError(f"label out of range: {task}={value!r} for voice {rec.voice_id}")
        key = (rec.phq9, rec.gad7, rec.split)
        prev = seen.setdefault(rec.voice_id, key)
        if prev != key:
            if prev[2] != rec.split:
                raise ManifestError(f"split leakage: voice {rec.voice_id} in {prev[2]} and {rec.split}")
            raise ManifestError(f"inconsistent labels for voice {rec.voice_id}")


def wav_duration(path: Path) -> float:
    with wave.open(str(path), "rb") as w:
        return w.getnframes() / w.getframerate()


def load_manifest(path, check_audio: bool = True) -> Dataset:
    """Read a JSONL manifest; any invalid line rejects the whole file.

    Audio paths are resolved against the manifest's directory. With
    ``check_audio`` the WAV headers are opened to enforce the 30 s floor.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                meta = {k: v for k, v in obj.items()
                        if k not in ("voice_id", "audio_path", "phq9", "gad7", "split")}
                rec = LabeledRecording(
                    voice_id=str(obj["voice_id"]),
                    audio_path=root / obj["audio_path"],
                    phq9=obj["phq9"],
                    gad7=obj["gad7"],
                    split=obj["split"],
                    meta=meta,
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed manifest line ({exc})") from None
            if type(rec.phq9) is not int or type(rec.gad7) is not int:
                raise ManifestError(f"{path}:{lineno}: labels must be integers")
            records.append(rec)
    dataset = Dataset(records)
    if check_audio:
        for rec in records:
            if not rec.audio_path.is_file():
                raise ManifestError(f"missing audio file {rec.audio_path}")
            dur = wav_duration(rec.audio_path)
            if dur < MIN_DURATION_S:
                raise ManifestError(f"audio shorter than 30 s: {rec.audio_path} ({dur:.2f} s)")
    return dataset


def write_manifest(dataset: Dataset | Sequence[LabeledRecording], path) -> Path:
    path = Path(path)
    root = path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in dataset:
            fh.write(json.dumps(rec.to_json(root), sort_keys=True) + "\n")
    return path


def apportion(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to earlier splits."""
    ideal = [n * r for r in ratios]
    counts = [math.floor(x) for x in ideal]
    order = sorted(range(len(ratios)), key=lambda i: (-(ideal[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_disjoint(records: Sequence[LabeledRecording], ratios=(0.68, 0.17, 0.15), seed: int = 0) -> Dataset:
    """Assign splits by voice so that no speaker crosses a split boundary.

    Voices are ordered by first appearance, shuffled with ``seed`` and cut
    according to a largest-remainder apportionment of ``ratios``. Every
    split receives at least one voice.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != len(SPLITS) or any(r <= 0 for r in ratios):
        raise ValueError("need three positive split ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    voices = list(dict.fromkeys(r.voice_id for r in records))
    if len(voices) < len(SPLITS):
        raise ValueError(f"need at least {len(SPLITS)} voices to split, got {len(voices)}")

    counts = apportion(len(voices), ratios)
    # guarantee non-empty splits by borrowing from the largest
    for i, c in enumerate(counts):
        if c == 0:
            j = max(range(len(counts)), key=lambda k: counts[k])
            counts[j] -= 1
            counts[i] = 1

    perm = np.random.default_rng(seed).permutation(len(voices))
    assignment = {}
    start = 0
    for name, c in zip(SPLITS, counts):
        for idx in perm[start:start + c]:
            assignment[voices[idx]] = name
        start += c

    out = [
        LabeledRecording(r.voice_id, r.audio_path, r.phq9, r.gad7, assignment[r.voice_id], dict(r.meta))
        for r in records
    ]
    return Dataset(out)
