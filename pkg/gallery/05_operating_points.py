"""Operating points from scores: ROC, Sn=Sp per cutoff and ordinal thresholds.

Run: python3 gallery/05_operating_points.py
"""

import numpy as np

from ordinalvoice.metrics import dp_thresholds, macro_recall, roc_auc, roc_points, sn_eq_sp

rng = np.random.default_rng(0)
phq = rng.integers(0, 28, 300)
score = phq / 27 + rng.normal(0, 0.25, phq.size)  # a noisy but useful score

# %% binary problem at PHQ >= 10
y = (phq >= 10).astype(int)
op = sn_eq_sp(score, y)
print(f"AUC {roc_auc(score, y):.3f}  Sn=Sp {op.sn_eq_sp:.1f}% at threshold {op.threshold:.3f}")
fpr, tpr, t = roc_points(score, y)
print("ROC has", len(t), "points from", (float(fpr[0]), float(tpr[0])), "to", (float(fpr[-1]), float(tpr[-1])))

# %% three buckets: below 10, 10 to 14, 15 and above
buckets = np.searchsorted([10, 15], phq, side="right")
thresholds, recall = dp_thresholds(score, buckets, 3)
print("thresholds", np.round(thresholds, 3), "macro recall", round(recall, 3))
naive = [sn_eq_sp(score, (phq >= k).astype(int)).threshold for k in (10, 15)]
naive_recall = macro_recall(score, buckets, naive, 3)
print("per-cutoff Sn=Sp thresholds", np.round(naive, 3), "macro recall", round(naive_recall, 3))
