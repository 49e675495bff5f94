"""Train the audio model on voice pairs, then score and evaluate the test split.

A few minutes on one core. Run: python3 gallery/02_train_and_evaluate.py [work_dir]
"""

import json
import sys
from pathlib import Path

from ordinalvoice import synth
from ordinalvoice.data import load_manifest
from ordinalvoice.metrics import metrics_report
from ordinalvoice.training import PreparedData, TrainRunConfig, train_supervised

work = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery_out/train")

cfg = synth.CorpusConfig(n_voices=80, duration_range=(35.0, 60.0), label_noise_sd=0.0, voice_noise=0.0,
                         lexical_noise=0.0, split_ratios=(0.6, 0.2, 0.2))
dataset = load_manifest(synth.generate_corpus(cfg, work / "corpus"))
prep = PreparedData(dataset)  # features are computed once and shared

# %% ordinal loss plus score variance over the two clips of each voice
result = train_supervised(TrainRunConfig(stage="supervised_coral_svl", epochs=10, seed=0), dataset, prep=prep)
for rec in result.records:
    print(rec.epoch, round(rec.train_loss, 3), {k: round(v, 1) for k, v in rec.val_sn_sp.items()})
print("best epoch", result.best_epoch)

# %% whole recordings are scored by averaging 30 s segments
scores = prep.segments("test").score(result.checkpoint)
report = metrics_report(scores)
print(json.dumps({t: (round(v["sn_eq_sp"], 1), round(v["auc"], 3)) for t, v in report["tasks"].items()}))
print("score correlation dep/anx", round(report["correlations"]["scores"]["pearson"], 3))
