"""Audio + text teacher, distilled into an audio-only student.

Run: python3 gallery/03_distillation.py [work_dir]
"""

import sys
from pathlib import Path

from ordinalvoice import synth
from ordinalvoice.data import load_manifest
from ordinalvoice.metrics import task_aggregate
from ordinalvoice.training import (
    PreparedData,
    TrainRunConfig,
    compose_teacher,
    distill_student,
    teacher_score_set,
    train_lexical,
    train_supervised,
)

work = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery_out/distill")
cfg = synth.CorpusConfig(n_voices=80, duration_range=(35.0, 60.0), label_noise_sd=0.1,
                         split_ratios=(0.6, 0.2, 0.2))
dataset = load_manifest(synth.generate_corpus(cfg, work / "corpus"))
prep = PreparedData(dataset)


def dep(ss):
    return round(task_aggregate(ss, "depression").sn_eq_sp, 1)


# small batches, a faster rate and a trainable base so a few epochs move the model
fast = dict(epochs=8, batch_voices=8, lr=5e-3, encoder={"frozen_base": False})

# %% two audio models and a text model
base = train_supervised(TrainRunConfig(stage="supervised_coral", **fast), dataset, prep=prep)
audio = train_supervised(TrainRunConfig(stage="supervised_coral_svl", **fast), dataset, prep=prep)
print("ordinal-only init test", dep(prep.segments("test").score(base.checkpoint)))
text = train_lexical(TrainRunConfig(stage="lexical", epochs=20), dataset, prep=prep)

# %% teacher = audio score + centred text score; only the audio goes to the student
teacher = compose_teacher(audio.checkpoint, text.checkpoint, dataset, prep)
print("teacher test", dep(teacher_score_set(teacher, dataset, "test")))
student = distill_student(teacher, base.checkpoint, TrainRunConfig(stage="kd_student", **fast), dataset, prep)
print("student test", dep(prep.segments("test").score(student.checkpoint)))

# %% negative control: teacher scores shuffled across voices
# it starts from the same init and keeps its best validation epoch, so on a
# corpus this easy it mostly holds on to the init's ranking rather than collapsing
control = distill_student(teacher, base.checkpoint, TrainRunConfig(stage="kd_student", **fast), dataset, prep,
                          shuffle_teacher=True)
print("shuffled-teacher test", dep(prep.segments("test").score(control.checkpoint)))
