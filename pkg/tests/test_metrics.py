import itertools
import json
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ordinalvoice.metrics import (
    MetricError,
    ScoreEntry,
    ScoreSet,
    candidate_thresholds,
    correlations,
    dp_thresholds,
    macro_recall,
    metrics_report,
    roc_auc,
    sn_eq_sp,
    task_aggregate,
    write_roc_csv,
)


def auc_pairs(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


def sweep(s, y):
    """Exhaustive Sn=Sp search with the documented tie-breaks."""
    best = None
    for t in candidate_thresholds(s):
        pred = s >= t
        sn = Fraction(int(pred[y == 1].sum()), int((y == 1).sum()))
        sp = Fraction(int((~pred[y == 0]).sum()), int((y == 0).sum()))
        key = (min(sn, sp), sn + sp, -t)
        if best is None or key > best[0]:
            best = (key, t, float(sn), float(sp))
    return best[1:]


def dp_brute(s, y, K):
    u = np.unique(s)
    edges = np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2, [np.inf]])
    best_val, best_cuts = -1.0, None
    for cuts in itertools.combinations_with_replacement(range(len(u) + 1), K - 1):
        val = macro_recall(s, y, [edges[q] for q in cuts], K)
        if val > best_val + 1e-12 or (abs(val - best_val) <= 1e-12 and cuts[::-1] < best_cuts[::-1]):
            best_val, best_cuts = val, cuts
    return [float(edges[q]) for q in best_cuts], best_val


def test_auc_examples():
    assert roc_auc([0.1, 0.9], [0, 1]) == 1.0
    assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    assert roc_auc([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1]) == 0.75
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 400), seed=st.integers(0, 10**6), levels=st.integers(2, 50))
def test_auc_equals_pair_counting(n, seed, levels):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, levels, n).astype(float)  # many ties
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    assert roc_auc(s, y) == auc_pairs(s, y)


def test_sn_eq_sp_examples():
    op = sn_eq_sp([1, 2, 3, 4], [0, 1, 0, 1])
    assert op.min_sn_sp == 0.5
    sep = sn_eq_sp([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert sep.sn_eq_sp == 100.0 and 0.2 < sep.threshold < 0.8
    with pytest.raises(MetricError):
        sn_eq_sp([1, 2], [0, 0])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 300), seed=st.integers(0, 10**6), levels=st.integers(2, 40))
def test_sn_eq_sp_matches_sweep(n, seed, levels):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, levels, n).astype(float) + 0.25 * rng.integers(0, 2, n)
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    op = sn_eq_sp(s, y)
    t, sn, sp = sweep(s, y)
    assert (op.threshold, op.sensitivity, op.specificity) == (t, sn, sp)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_rank_invariance_and_duplication(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(60)
    y = (s + rng.standard_normal(60) > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    a, b = sn_eq_sp(s, y), sn_eq_sp(np.exp(3 * s) + 1, y)
    assert (a.sensitivity, a.specificity) == (b.sensitivity, b.specificity)
    assert roc_auc(s, y) == roc_auc(np.exp(3 * s) + 1, y)
    d = sn_eq_sp(np.tile(s, 2), np.tile(y, 2))
    assert d == a


def _score_set(n=80, seed=0):
    rng = np.random.default_rng(seed)
    sev = rng.uniform(0, 1, n)
    return ScoreSet([ScoreEntry(f"r{i}", f"v{i // 2}", float(sev[i] + rng.normal(0, .2)),
                                float(sev[i] + rng.normal(0, .3)), int(round(27 * sev[i])), int(round(21 * sev[i])))
                     for i in range(n)])


def test_task_aggregate_problem_counts():
    ss = _score_set()
    dep, anx = task_aggregate(ss, "depression"), task_aggregate(ss, "anxiety")
    assert [p.cutoff for p in dep.problems] == [10, 15]
    assert [p.cutoff for p in anx.problems] == [5, 10, 15]
    assert dep.sn_eq_sp == pytest.approx(np.mean([p.sn_eq_sp for p in dep.problems]))
    assert anx.auc == pytest.approx(np.mean([p.auc for p in anx.problems]))


def test_task_aggregate_monotone_transform():
    ss = _score_set(seed=3)
    moved = ScoreSet([ScoreEntry(e.recording_id, e.voice_id, np.tanh(e.score_dep) * 5 - 1, e.score_anx ** 3,
                                 e.phq9, e.gad7) for e in ss.entries])
    for task in ("depression", "anxiety"):
        a, b = task_aggregate(ss, task), task_aggregate(moved, task)
        assert (a.sn_eq_sp, a.auc) == (b.sn_eq_sp, b.auc)


def test_single_class_cutoff_excluded_with_warning():
    ss = ScoreSet([ScoreEntry(f"r{i}", f"v{i}", float(i), float(i), 12 + i % 2 * 5, 3) for i in range(10)])
    with pytest.warns(UserWarning, match="cutoff 10"):
        agg = task_aggregate(ss, "depression")
    assert [p.defined for p in agg.problems] == [False, True]
    assert agg.sn_eq_sp == agg.problems[1].sn_eq_sp
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(MetricError):
            task_aggregate(ss, "anxiety")


def test_dp_k2_is_youden():
    rng = np.random.default_rng(1)
    s = rng.standard_normal(50)
    y = (s + rng.standard_normal(50) > 0.3).astype(int)
    (t,), value = dp_thresholds(s, y, 2)
    best = max(((s >= c)[y == 1].mean() + (s < c)[y == 0].mean()) for c in candidate_thresholds(s))
    assert 2 * value == pytest.approx(best)


def test_dp_twelve_points():
    rng = np.random.default_rng(12)
    s = rng.permutation(12).astype(float)
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2])[np.argsort(np.argsort(s + rng.normal(0, 3, 12)))]
    got = dp_thresholds(s, y, 3)
    want = dp_brute(s, y, 3)
    assert got[0] == want[0] and got[1] == pytest.approx(want[1], abs=1e-12)


def test_dp_perfect_order():
    s = np.arange(9.0)
    y = np.repeat([0, 1, 2], 3)
    thresholds, value = dp_thresholds(s, y, 3)
    assert value == 1.0
    assert thresholds == [2.5, 5.5]


def test_dp_errors():
    with pytest.raises(MetricError, match="represented"):
        dp_thresholds([1.0, 2.0, 3.0], [0, 0, 2], 3)
    with pytest.raises(MetricError):
        dp_thresholds([1.0], [0], 2)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(4, 40), K=st.integers(2, 4), seed=st.integers(0, 10**6), levels=st.integers(3, 30))
def test_dp_matches_brute_force(n, K, seed, levels):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, levels, n).astype(float)
    y = np.concatenate([np.arange(K), rng.integers(0, K, n - K)])
    rng.shuffle(y)
    got = dp_thresholds(s, y, K)
    want = dp_brute(s, y, K)
    assert got[0] == want[0]
    assert got[1] == pytest.approx(want[1], abs=1e-12)
    assert macro_recall(s, y, got[0], K) == pytest.approx(got[1], abs=1e-12)


def test_correlation_examples():
    x = np.array([1.0, 2.0, 3.0, 5.0])
    assert correlations(x, x) == pytest.approx((1, 1, 1))
    assert correlations(x, -x) == pytest.approx((-1, -1, -1))
    assert correlations([1, 2, 3], [1, 3, 2])[2] == pytest.approx(1 / 3)
    with pytest.raises(MetricError):
        correlations([1, 1, 1], [1, 2, 3])


def _tau_b(x, y):
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx, dy = np.sign(x[i] - x[j]), np.sign(y[i] - y[j])
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tx += 1
            elif dy == 0:
                ty += 1
            elif dx == dy:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / np.sqrt((conc + disc + tx) * (conc + disc + ty))


def _avg_rank(v):
    return np.array([np.sum(v < a) + (np.sum(v == a) + 1) / 2 for a in v])


@settings(max_examples=15, deadline=None)
@given(n=st.integers(3, 120), seed=st.integers(0, 10**6))
def test_correlations_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 8, n).astype(float)
    y = x + rng.integers(-3, 4, n)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return
    r, rho, tau = correlations(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    assert r == pytest.approx((xc @ yc) / np.sqrt((xc @ xc) * (yc @ yc)), abs=1e-12)
    rx, ry = _avg_rank(x) - (n + 1) / 2, _avg_rank(y) - (n + 1) / 2
    assert rho == pytest.approx((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)), abs=1e-12)
    assert tau == pytest.approx(_tau_b(x, y), abs=1e-12)


def test_score_set_round_trip_and_per_voice(tmp_path):
    ss = _score_set(10)
    path = ss.write_jsonl(tmp_path / "s.jsonl")
    back = ScoreSet.read_jsonl(path)
    assert back.entries == ss.entries
    pv = ss.per_voice()
    assert len(pv) == 5
    assert pv.entries[0].score_dep == pytest.approx((ss.entries[0].score_dep + ss.entries[1].score_dep) / 2)
    (tmp_path / "bad.jsonl").write_text(json.dumps({"recording_id": "a"}) + "\n")
    with pytest.raises(MetricError, match=":1:"):
        ScoreSet.read_jsonl(tmp_path / "bad.jsonl")


def test_report_structure_and_roc_csv(tmp_path):
    ss = _score_set(60, seed=4)
    rep = metrics_report(ss)
    assert set(rep["tasks"]) == {"depression", "anxiety"}
    prob = rep["tasks"]["depression"]["problems"][0]
    assert {"cutoff", "threshold", "sensitivity", "specificity", "sn_eq_sp", "auc"} <= set(prob)
    assert rep["correlations"]["labels"]["pearson"] == pytest.approx(
        stats.pearsonr(ss.labels("depression"), ss.labels("anxiety")).statistic)
    json.dumps(rep)
    s, y = ss.scores("depression"), (ss.labels("depression") >= 10).astype(int)
    rows = write_roc_csv(tmp_path / "roc.csv", s, y).read_text().splitlines()
    assert rows[0] == "fpr,tpr,threshold"
    assert len(rows) == 1 + len(candidate_thresholds(s))
