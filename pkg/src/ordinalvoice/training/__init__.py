from .batches import (
    CLIP,
    FRAMES,
    HOP,
    ClipStore,
    PairBatch,
    PairEntry,
    build_pair_batch,
    effective_batch_voices,
    epoch_batches,
    pair_starts,
)
from .inference import SegmentStore, infer_recording, score_dataset, score_segments, segment_features
from .loops import (
    STAGES,
    Divergence,
    EpochRecord,
    PreparedData,
    TeacherScores,
    TrainResult,
    TrainRunConfig,
    compose_teacher,
    count_head_params,
    distill_student,
    finetune_head,
    fuse,
    plan_epochs,
    teacher_score_set,
    train_lexical,
    train_llma,
    train_supervised,
)
