"""Screening metrics for scalar severity scores.

Higher scores mean more severe; a case is called positive when
``score >= threshold``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

CUTOFFS = {"depression": (10, 15), "anxiety": (5, 10, 15)}
SCORE_KEYS = {"depression": ("score_dep", "phq9"), "anxiety": ("score_anx", "gad7")}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float

    @property
    def min_sn_sp(self) -> float:
        return min(self.sensitivity, self.specificity)

    @property
    def sn_eq_sp(self) -> float:
        return 100.0 * self.min_sn_sp


@dataclass(frozen=True)
class DecisionProblem:
    task: str
    cutoff: int

    def positives(self, labels) -> np.ndarray:
        return (np.asarray(labels) >= self.cutoff).astype(int)


@dataclass
class ScoreEntry:
    recording_id: str
    voice_id: str
    score_dep: float
    score_anx: float
    phq9: int
    gad7: int


@dataclass
class ScoreSet:
    entries: list[ScoreEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def scores(self, task) -> np.ndarray:
        key = SCORE_KEYS[task][0]
        return np.array([getattr(e, key) for e in self.entries], dtype=np.float64)

    def labels(self, task) -> np.ndarray:
        key = SCORE_KEYS[task][1]
        return np.array([getattr(e, key) for e in self.entries], dtype=np.int64)

    def per_voice(self) -> "ScoreSet":
        """Average scores over each voice's recordings (labels are shared per voice)."""
        groups: dict[str, list[ScoreEntry]] = {}
        for e in self.entries:
            groups.setdefault(e.voice_id, []).append(e)
        out = []
        for vid, es in groups.items():
            out.append(ScoreEntry(vid, vid, float(np.mean([e.score_dep for e in es])),
                                  float(np.mean([e.score_anx for e in es])), es[0].phq9, es[0].gad7))
        return ScoreSet(out)

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "ScoreSet":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    e = ScoreEntry(str(obj["recording_id"]), str(obj["voice_id"]), float(obj["score_dep"]),
                                   float(obj["score_anx"]), int(obj["phq9"]), int(obj["gad7"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise MetricError(f"{path}:{lineno}: malformed score line ({exc})") from None
                if not (np.isfinite(e.score_dep) and np.isfinite(e.score_anx)):
                    raise MetricError(f"{path}:{lineno}: non-finite score")
                if not (0 <= e.phq9 <= 27 and 0 <= e.gad7 <= 21):
                    raise MetricError(f"{path}:{lineno}: label out of range")
                entries.append(e)
        return cls(entries)


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(int)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricError("labels must be 0/1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise MetricError("need at least one positive and one negative")
    return s, y


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + P(tie) / 2 via average ranks."""
    s, y = _binary(scores, labels)
    ranks = stats.rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between adjacent distinct scores, plus -inf and +inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def _roc_counts(scores, labels):
    s, y = _binary(scores, labels)
    t = candidate_thresholds(s)
    pos = np.sort(s[y == 1])
    neg = np.sort(s[y == 0])
    # count of scores >= t
    tp = pos.size - np.searchsorted(pos, t, side="left")
    fp = neg.size - np.searchsorted(neg, t, side="left")
    return tp, fp, pos.size, neg.size, t


def roc_points(scores, labels):
    """``(fpr, tpr, thresholds)`` at every candidate threshold, thresholds ascending."""
    tp, fp, n_pos, n_neg, t = _roc_counts(scores, labels)
    return fp / n_neg, tp / n_pos, t


def sn_eq_sp(scores, labels) -> OperatingPoint:
    """Operating point maximizing min(sensitivity, specificity).

    Ties go to the larger Sn + Sp, then to the lower threshold.
    """
    tp, fp, n_pos, n_neg, t = _roc_counts(scores, labels)
    tn = n_neg - fp
    tpr, spec = tp / n_pos, tn / n_neg
    best = np.minimum(tpr, spec)
    # Sn + Sp compared exactly on the common denominator
    total = tp.astype(np.int64) * n_neg + tn.astype(np.int64) * n_pos
    # lexsort: last key is primary
    order = np.lexsort((t, -total, -best))
    i = order[0]
    return OperatingPoint(float(t[i]), float(tpr[i]), float(spec[i]))


@dataclass
class ProblemResult:
    cutoff: int
    threshold: float | None
    sensitivity: float | None
    specificity: float | None
    sn_eq_sp: float | None
    auc: float | None
    defined: bool = True


@dataclass
class TaskAggregate:
    task: str
    sn_eq_sp: float
    auc: float
    problems: list[ProblemResult]
    warnings: list[str] = field(default_factory=list)


def task_aggregate(score_set: ScoreSet, task: str, cutoffs=None) -> TaskAggregate:
    """Unweighted means of Sn=Sp and AUC over the task's decision problems.

    A cutoff whose labels are all on one side is reported as undefined,
    excluded from the means, and noted in ``warnings``.
    """
    if len(score_set) == 0:
        raise MetricError("empty score set")
    s, labels = score_set.scores(task), score_set.labels(task)
    results, notes = [], []
    for k in cutoffs or CUTOFFS[task]:
        y = DecisionProblem(task, k).positives(labels)
        if y.sum() in (0, y.size):
            msg = f"{task} cutoff {k}: single class present, excluded"
            warnings.warn(msg)
            notes.append(msg)
            results.append(ProblemResult(k, None, None, None, None, None, defined=False))
            continue
        op = sn_eq_sp(s, y)
        results.append(ProblemResult(k, op.threshold, op.sensitivity, op.specificity, op.sn_eq_sp, roc_auc(s, y)))
    defined = [r for r in results if r.defined]
    if not defined:
        raise MetricError(f"no decision problem for {task} has both classes")
    return TaskAggregate(task, float(np.mean([r.sn_eq_sp for r in defined])),
                         float(np.mean([r.auc for r in defined])), results, notes)


def dp_thresholds(scores, labels, K: int):
    """Monotone thresholds ``t_1 <= ... <= t_{K-1}`` maximizing the sum of per-bucket recall.

    ``labels`` are bucket indices ``0..K-1``. Sorted examples are cut into K
    consecutive (possibly empty) runs at distinct-score boundaries; run j is
    predicted as bucket j. Returns ``(thresholds, macro_recall)``. Among
    optimal placements the lowest last threshold is chosen, then the lowest
    second-to-last, and so on.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(int)
    if s.size != y.size:
        raise MetricError("scores and labels differ in length")
    if K < 2 or s.size < K:
        raise MetricError("need K >= 2 and at least K examples")
    counts = np.bincount(y, minlength=K)
    if y.min() < 0 or y.max() >= K or np.any(counts == 0):
        raise MetricError("every bucket 0..K-1 must be represented")
    u, inv = np.unique(s, return_inverse=True)
    G = u.size
    # gain[g, j]: recall credit if distinct-score group g is labelled j
    gain = np.zeros((G, K))
    np.add.at(gain, (inv, y), 1.0 / counts[y])
    cum = np.vstack([np.zeros(K), np.cumsum(gain, axis=0)])  # cum[p, j] = credit of groups < p as bucket j

    # best[j][p]: best value labelling groups < p with buckets 0..j (bucket j last)
    best = np.full((K, G + 1), -np.inf)
    arg = np.zeros((K, G + 1), dtype=int)
    best[0] = cum[:, 0]
    for j in range(1, K):
        # best[j][p] = max_{q <= p} best[j-1][q] + cum[p, j] - cum[q, j]
        prev = best[j - 1] - cum[:, j]
        running, running_q = -np.inf, 0
        for p in range(G + 1):
            # strict '>' keeps the earliest q, i.e. the lower threshold
            if prev[p] > running + 1e-12:
                running, running_q = prev[p], p
            best[j, p] = running + cum[p, j]
            arg[j, p] = running_q
    cuts = [G]
    for j in range(K - 1, 0, -1):
        cuts.append(arg[j, cuts[-1]])
    cuts = cuts[::-1][:-1]  # cut positions q_1 <= ... <= q_{K-1}
    edges = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])
    thresholds = [float(edges[q]) for q in cuts]
    return thresholds, float(best[K - 1, G] / K)


def macro_recall(scores, labels, thresholds, K: int) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    pred = np.searchsorted(np.asarray(thresholds), s, side="right")
    return float(np.mean([np.mean(pred[y == j] == j) for j in range(K)]))


def correlations(x, y) -> tuple[float, float, float]:
    """Pearson r, Spearman rho (average ranks) and Kendall tau-b."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise MetricError("need two equal-length sequences of at least 2 values")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("zero-variance input")
    r = float(np.corrcoef(x, y)[0, 1])
    rho = float(np.corrcoef(stats.rankdata(x), stats.rankdata(y))[0, 1])
    tau = float(stats.kendalltau(x, y, variant="b").statistic)
    return r, rho, tau


# --------------------------------------------------------------------- reports


def metrics_report(score_set: ScoreSet, per_voice: bool = False) -> dict:
    """JSON-ready report: per-task problems and aggregates plus a correlation block."""
    ss = score_set.per_voice() if per_voice else score_set
    report = {"n": len(ss), "unit": "voice" if per_voice else "recording", "tasks": {}}
    for task in CUTOFFS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            agg = task_aggregate(ss, task)
        report["tasks"][task] = {
            "sn_eq_sp": agg.sn_eq_sp,
            "auc": agg.auc,
            "problems": [asdict(p) for p in agg.problems],
            "warnings": agg.warnings,
        }
    corr = {}
    for name, (a, b) in {"labels": (ss.labels("depression"), ss.labels("anxiety")),
                         "scores": (ss.scores("depression"), ss.scores("anxiety"))}.items():
        try:
            r, rho, tau = correlations(a, b)
            corr[name] = {"pearson": r, "spearman": rho, "kendall": tau}
        except MetricError as exc:
            corr[name] = {"error": str(exc)}
    report["correlations"] = corr
    return report


def write_roc_csv(path, scores, labels) -> Path:
    fpr, tpr, t = roc_points(scores, labels)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fpr,tpr,threshold\n")
        for a, b, c in zip(fpr, tpr, t):
            fh.write(f"{a!r},{b!r},{c!r}\n")
    return path
