"""Training objectives.

All functions take and return autograd tensors so they can sit at the top
of a graph; plain arrays are accepted and wrapped as constants.

The ordinal loss uses the logistic link: each cumulative decision problem
``y >= k`` contributes a binary cross-entropy on the logit ``s + b_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.autograd import Tensor, log_sigmoid
from .nn.model import LEVELS


@dataclass(frozen=True)
class LossWeights:
    coral: float = 1.0
    svl: float = 40.0
    kd: float = 1.0
    kd_svl: float = 1.0

    def __post_init__(self):
        if min(self.coral, self.svl, self.kd, self.kd_svl) < 0:
            raise ValueError("loss weights must be non-negative")


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def cumulative_levels(labels, n: int) -> np.ndarray:
    """Row ``i`` holds ``[y_i >= 1, ..., y_i >= n]`` as 0/1."""
    y = np.asarray(labels).reshape(-1, 1)
    return (y >= np.arange(1, n + 1)[None, :]).astype(np.float64)


def coral_terms(scores, biases, labels) -> Tensor:
    """Per-example ordinal loss for a batch of scalar scores, shape ``(N,)``."""
    s, b = _t(scores), _t(biases)
    n = b.shape[0]
    y = np.asarray(labels)
    if np.any(y < 0) or np.any(y > n):
        raise ValueError(f"label out of range for {n} ordinal levels")
    levels = cumulative_levels(y, n).astype(s.dtype)
    logits = s.reshape(-1, 1) + b.reshape(1, n)
    # log(1 - sigmoid(z)) = log sigmoid(-z)
    per = log_sigmoid(logits) * levels + log_sigmoid(-logits) * (1.0 - levels)
    return -per.sum(axis=1)


def coral_loss(score, biases, label) -> Tensor:
    """Ordinal loss for one score and label ``y`` in ``0..len(biases)``."""
    return coral_terms(_t(score).reshape(1), biases, [label]).sum()


def svl(scores) -> Tensor:
    """Population variance of one voice's scores (two clips: ``(s1 - s2)**2 / 4``)."""
    s = _t(scores).reshape(-1)
    if s.shape[0] < 2:
        raise ValueError("score variance needs at least two scores")
    d = s - s.mean()
    return d.square().mean()


def svl_groups(scores) -> Tensor:
    """Mean over rows of per-row population variance, for a ``(voices, clips)`` score matrix."""
    s = _t(scores)
    if s.data.ndim != 2 or s.shape[1] < 2:
        raise ValueError("expected a (voices, clips >= 2) score matrix")
    d = s - s.mean(axis=1, keepdims=True)
    return d.square().mean()


def combined_supervised_loss(scores: dict, labels: dict, biases: dict, weights: LossWeights = LossWeights()) -> Tensor:
    """Ordinal loss averaged over (clip, task) pairs plus weighted score variance.

    ``scores[task]`` is a ``(voices, clips)`` tensor, ``labels[task]`` the
    per-voice labels and ``biases[task]`` the ordinal biases. The variance
    term is averaged over (voice, task) groups.
    """
    tasks = list(scores)
    coral_total, svl_total, n_terms = None, None, 0
    for task in tasks:
        s = _t(scores[task])
        if s.data.ndim != 2:
            raise ValueError("scores must be grouped as (voices, clips)")
        V, C = s.shape
        y = np.repeat(np.asarray(labels[task]), C)
        c = coral_terms(s.reshape(-1), biases[task], y).sum()
        coral_total = c if coral_total is None else coral_total + c
        n_terms += V * C
        if weights.svl:
            v = svl_groups(s)
            svl_total = v if svl_total is None else svl_total + v
    loss = coral_total * (weights.coral / n_terms)
    if svl_total is not None:
        loss = loss + svl_total * (weights.svl / len(tasks))
    return loss


def kd_loss(student, teacher) -> Tensor:
    """Mean squared error between student and fixed teacher scores."""
    s = _t(student).reshape(-1)
    t = np.asarray(teacher.data if isinstance(teacher, Tensor) else teacher, dtype=s.dtype).reshape(-1)
    if s.shape[0] != t.shape[0]:
        raise ValueError(f"length mismatch: {s.shape[0]} student vs {t.shape[0]} teacher scores")
    return (s - t).square().mean()


def llma_loss(student_emb, teacher_emb, mode: str = "mse") -> Tensor:
    """Embedding-matching loss, ``mse`` or ``cosine`` (``1 - cos``), averaged over rows.

    Accepts single vectors or ``(N, D)`` batches.
    """
    s = _t(student_emb)
    t = np.asarray(teacher_emb.data if isinstance(teacher_emb, Tensor) else teacher_emb, dtype=s.dtype)
    if s.shape != t.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {t.shape}")
    if s.data.ndim == 1:
        s, t = s.reshape(1, -1), t.reshape(1, -1)
    if mode == "mse":
        return (s - t).square().mean()
    if mode == "cosine":
        s_norm = s.square().sum(axis=1).sqrt()
        t_norm = np.linalg.norm(t, axis=1)
        if np.any(s_norm.data == 0) or np.any(t_norm == 0):
            raise ValueError("cosine loss is undefined for zero vectors")
        cos = (s * t).sum(axis=1) / (s_norm * t_norm)
        return (1.0 - cos).mean()
    raise ValueError(f"unknown mode {mode!r}")


def default_biases(task: str) -> np.ndarray:
    return np.zeros(LEVELS[task])
