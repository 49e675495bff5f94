"""Teach an audio encoder to imitate text embeddings, then fuse it with the biomarker encoder.

Run: python3 gallery/04_llm_approximation.py [work_dir]
"""

import sys
from pathlib import Path

from ordinalvoice import synth
from ordinalvoice.data import load_manifest
from ordinalvoice.metrics import task_aggregate
from ordinalvoice.training import (
    PreparedData,
    TrainRunConfig,
    count_head_params,
    finetune_head,
    train_lexical,
    train_llma,
    train_supervised,
)

work = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery_out/llma")
cfg = synth.CorpusConfig(n_voices=80, duration_range=(35.0, 60.0), label_noise_sd=0.0, voice_noise=0.0,
                         lexical_noise=0.0, split_ratios=(0.6, 0.2, 0.2))
dataset = load_manifest(synth.generate_corpus(cfg, work / "corpus"))
prep = PreparedData(dataset)

bio = train_supervised(TrainRunConfig(stage="supervised_coral_svl", epochs=8), dataset, prep=prep)
text = train_lexical(TrainRunConfig(stage="lexical", epochs=20), dataset, prep=prep)

# %% embedding matching never reads labels; epochs are chosen by validation MSE
llma_cfg = TrainRunConfig(stage="llma_embed", epochs=10, batch_voices=8, lr=3e-3,
                          llma_encoder={"frozen_base": False})
llma = train_llma(text.checkpoint, dataset, llma_cfg, prep)
start = llma.initial["val_mse"]
for rec in llma.records:
    print(rec.epoch, f"val mse {rec.extra['val_mse']:.4f} ({rec.extra['val_mse'] / start:.1%} of init)")

# %% both encoders frozen; only trunk, heads and ordinal biases train
fused = finetune_head(bio.checkpoint, llma.checkpoint, dataset, TrainRunConfig(stage="head_finetune", epochs=8), prep)
head, total = count_head_params(fused.checkpoint)
print(f"trainable {head} of {total} parameters")
for name, model in (("audio only", bio.checkpoint), ("fused", fused.checkpoint)):
    ss = prep.segments("test").score(model)
    print(name, round(task_aggregate(ss, "depression").sn_eq_sp, 1))
