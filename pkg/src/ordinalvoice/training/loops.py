"""Training stages: supervised ordinal, lexical, distillation, embedding matching, head fine-tuning.

Every stage shares the same skeleton: the clip windows for all epochs are
planned up front from the run seed, each step's voices are split into
fixed-size shards whose gradients are summed in shard order, and after
each epoch a validation metric picks the checkpoint to keep.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import synth
from ..data import Dataset
from ..losses import LossWeights, combined_supervised_loss, kd_loss, llma_loss, svl_groups
from ..metrics import ScoreEntry, ScoreSet, task_aggregate
from ..nn.autograd import Tensor, concat
from ..nn.model import (
    TASKS,
    Checkpoint,
    EncoderConfig,
    LexicalConfig,
    TrunkHeadConfig,
    audio_frames,
    branch_forward,
    build_model,
    fit_norm,
    forward,
    head_forward,
)
from ..nn.optim import OptimizerState, adamw_step
from .batches import FRAMES, HOP, ClipStore, effective_batch_voices, epoch_batches, pair_starts
from .inference import SegmentStore

log = logging.getLogger(__name__)

STAGES = ("supervised_coral", "supervised_coral_svl", "lexical", "kd_student", "llma_embed", "head_finetune")


class Divergence(FloatingPointError):
    pass


@dataclass
class TrainRunConfig:
    stage: str = "supervised_coral_svl"
    epochs: int = 20
    batch_voices: int = 128
    min_batch_voices: int = 8
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    coral_weight: float = 1.0
    svl_weight: float = 40.0
    kd_weight: float = 1.0
    kd_svl_weight: float = 1.0
    llma_mode: str = "mse"
    shard_voices: int = 8
    threads: int = 1
    encoder: dict = field(default_factory=dict)
    head: dict = field(default_factory=dict)
    lexical_dims: tuple = (96,)
    llma_encoder: dict = field(default_factory=dict)
    # file inputs/outputs, used by the command line
    manifest: str | None = None
    out_dir: str | None = None
    init_checkpoint: str | None = None
    audio_checkpoint: str | None = None
    lexical_checkpoint: str | None = None
    llma_checkpoint: str | None = None
    teacher_scores: str | None = None

    _REQUIRED = {
        "kd_student": ("init_checkpoint", "teacher_scores"),
        "llma_embed": ("lexical_checkpoint",),
        "head_finetune": ("audio_checkpoint", "llma_checkpoint"),
    }

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.epochs < 1 or self.batch_voices < 1 or self.shard_voices < 1:
            raise ValueError("epochs, batch_voices and shard_voices must be positive")
        self.lexical_dims = tuple(self.lexical_dims)

    def require_paths(self):
        missing = [k for k in self._REQUIRED.get(self.stage, ()) if getattr(self, k) is None]
        if missing:
            raise ValueError(f"stage {self.stage} needs config fields: {', '.join(missing)}")

    @property
    def weights(self) -> LossWeights:
        svl = self.svl_weight if self.stage != "supervised_coral" else 0.0
        return LossWeights(self.coral_weight, svl, self.kd_weight, self.kd_svl_weight)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainRunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EpochRecord:
    epoch: int
    val_sn_sp: dict
    train_loss: float
    checkpoint: str
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    best_epoch: int
    records: list[EpochRecord]
    diverged: bool = False
    initial: dict = field(default_factory=dict)

    def write_history(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")
        return path


# ------------------------------------------------------------------ data prep


class PreparedData:
    """Lazily computed features shared by all stages of one dataset."""

    def __init__(self, dataset: Dataset, threads: int = 1):
        self.dataset = dataset
        self.threads = threads
        self._clips: dict[str, ClipStore] = {}
        self._segments: dict[str, SegmentStore] = {}
        self._lex: dict[str, np.ndarray] = {}

    def clips(self, split="train") -> ClipStore:
        if split not in self._clips:
            self._clips[split] = ClipStore(self.dataset, split, self.threads)
        return self._clips[split]

    def segments(self, split) -> SegmentStore:
        if split not in self._segments:
            self._segments[split] = SegmentStore(self.dataset, split, self.threads)
        return self._segments[split]

    def lexical(self, split) -> np.ndarray:
        """``(n_recordings, LEX_DIM)`` sidecar vectors in split order."""
        if split not in self._lex:
            rows = []
            for rec in self.dataset.split(split):
                path = synth.lex_path(rec.audio_path)
                if not path.is_file():
                    raise FileNotFoundError(f"missing lexical sidecar {path}")
                rows.append(synth.read_lex(path))
            self._lex[split] = np.stack(rows)
        return self._lex[split]

    def audio_norm(self):
        store = self.clips("train")
        return fit_norm(store.frames[v] for v in store.voices)


def plan_epochs(store: ClipStore, config: TrainRunConfig):
    """Per epoch, a list of batches; each batch is a list of ``(voice, start_a, start_b)``."""
    bv = effective_batch_voices(config.batch_voices, len(store.voices), config.min_batch_voices)
    plan = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        batches = []
        for voices in epoch_batches(store.voices, bv, rng):
            batches.append([(v, *pair_starts(store.total[v], rng)) for v in voices])
        plan.append(batches)
    return plan


def _shards(batch, size):
    return [batch[i:i + size] for i in range(0, len(batch), size)]


def _pair_features(store: ClipStore, items) -> np.ndarray:
    return np.stack([np.stack([store.clip_features(v, a), store.clip_features(v, b)]) for v, a, b in items])


# ------------------------------------------------------------------ optimizer


def _run_step(model: Checkpoint, opt: OptimizerState, shard_fns, threads: int) -> float:
    """Evaluate shard losses, sum their gradients in order, and apply one AdamW step."""

    def run(fn):
        P = model.tensors()
        loss = fn(P)
        if not np.isfinite(loss.data).all():
            return float("nan"), {}
        loss.backward()
        return float(loss.data), {k: t.grad for k, t in P.items() if t.requires_grad and t.grad is not None}

    if threads > 1 and len(shard_fns) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, shard_fns))
    else:
        results = [run(fn) for fn in shard_fns]
    total = 0.0
    grads: dict[str, np.ndarray] = {}
    for value, g in results:
        if not math.isfinite(value):
            raise Divergence("non-finite training loss")
        total += value
        for k, arr in g.items():
            grads[k] = arr if k not in grads else grads[k] + arr
    if not all(np.isfinite(a).all() for a in grads.values()):
        raise Divergence("non-finite gradient")
    adamw_step(model.params, grads, opt, model.no_decay())
    return total


def _fit(model: Checkpoint, plan, make_shards, evaluate, config: TrainRunConfig, maximize=True) -> TrainResult:
    """Generic epoch loop; ``evaluate(model) -> (selection_value, val_sn_sp, extra)``."""
    opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    records, best, best_val, diverged = [], None, None, False
    _, _, initial = evaluate(model)
    for epoch, batches in enumerate(plan, 1):
        losses = []
        try:
            for bi, batch in enumerate(batches):
                fns = make_shards(epoch, bi, batch)
                losses.append(_run_step(model, opt, fns, config.threads))
        except Divergence:
            log.warning("training diverged in epoch %d; keeping the last finite state", epoch)
            diverged = True
            break
        value, sn_sp, extra = evaluate(model)
        ref = f"epoch-{epoch}"
        if config.out_dir:
            ref = str(model.save(Path(config.out_dir) / f"{config.stage}_epoch{epoch:03d}.ckpt"))
        records.append(EpochRecord(epoch, sn_sp, float(np.mean(losses)), ref, extra))
        log.info("%s epoch %d loss %.4f val %s", config.stage, epoch, records[-1].train_loss, sn_sp or extra)
        better = best_val is None or (value > best_val if maximize else value < best_val)
        if better:
            best_val, best = value, (epoch, model.copy())
    if best is None:
        best = (0, model.copy())
    return TrainResult(best[1], best[0], records, diverged, initial)


# ----------------------------------------------------------------- evaluation


def _sn_sp(score_set: ScoreSet, tasks=TASKS) -> tuple[dict, dict]:
    sn, auc = {}, {}
    for t in tasks:
        agg = task_aggregate(score_set, t)
        sn[t], auc[t] = agg.sn_eq_sp, agg.auc
    return sn, auc


def _supervised_eval(segments: SegmentStore, threads=1, fn=None):
    def evaluate(model):
        ss = segments.score(model, threads, fn(model) if fn else None)
        sn, auc = _sn_sp(ss)
        return sn["depression"], sn, {"val_auc": auc}

    return evaluate


# ------------------------------------------------------------------ stages


def new_audio_model(prep: PreparedData, config: TrainRunConfig) -> Checkpoint:
    return build_model([("enc", EncoderConfig(**config.encoder))], TrunkHeadConfig(**config.head),
                       seed=config.seed, norms={"enc": prep.audio_norm()})


def train_supervised(config: TrainRunConfig, dataset: Dataset, init: Checkpoint | None = None,
                     prep: PreparedData | None = None) -> TrainResult:
    """Ordinal training on voice-paired clips, with or without the score-variance term."""
    if config.stage not in ("supervised_coral", "supervised_coral_svl"):
        raise ValueError(f"train_supervised cannot run stage {config.stage}")
    prep = prep or PreparedData(dataset, config.threads)
    store = prep.clips("train")
    model = init.copy() if init is not None else new_audio_model(prep, config)
    weights = config.weights
    branch = model.branches[0]["name"]
    plan = plan_epochs(store, config)
    tasks = model.head_config.tasks

    def make_shards(epoch, bi, batch):
        fns = []
        for si, items in enumerate(_shards(batch, config.shard_voices)):
            frac = len(items) / len(batch)

            def fn(P, items=items, frac=frac, si=si):
                feats = _pair_features(store, items)
                V = feats.shape[0]
                rng = np.random.default_rng([config.seed, epoch, bi, si, 7])
                _, _, scores = forward(model, {branch: feats.reshape(V * 2, *feats.shape[2:])}, True, rng, P)
                labels = store.label_arrays([v for v, _, _ in items])
                grouped = {t: scores[t].reshape(V, 2) for t in tasks}
                loss = combined_supervised_loss(grouped, labels, {t: P[f"coral.{t}"] for t in tasks}, weights)
                return loss * frac

            fns.append(fn)
        return fns

    return _fit(model, plan, make_shards, _supervised_eval(prep.segments("validation"), config.threads), config)


# lexical ("text") model -------------------------------------------------------


def new_lexical_model(prep: PreparedData, config: TrainRunConfig) -> Checkpoint:
    x = prep.lexical("train")
    return build_model([("lex", LexicalConfig(x.shape[1], config.lexical_dims))], TrunkHeadConfig(**config.head),
                       seed=config.seed, norms={"lex": fit_norm([x])})


def lexical_scores(model: Checkpoint, lex: np.ndarray) -> np.ndarray:
    """``(n, n_tasks)`` eval-mode scores of a lexical model."""
    _, _, scores = forward(model, {"lex": lex})
    return np.stack([scores[t].data for t in model.head_config.tasks], axis=1).astype(np.float64)


def lexical_embeddings(model: Checkpoint, lex: np.ndarray) -> np.ndarray:
    """Pooled output of the lexical branch: the embedding the audio approximator imitates."""
    pooled, _, _ = forward(model, {"lex": lex})
    return pooled["lex"].data.astype(np.float64)


def train_lexical(config: TrainRunConfig, dataset: Dataset, prep: PreparedData | None = None) -> TrainResult:
    """Ordinal training of the text stand-in on per-recording lexical vectors."""
    prep = prep or PreparedData(dataset, config.threads)
    x_train = prep.lexical("train")
    recs = dataset.split("train")
    y = {"depression": np.array([r.phq9 for r in recs]), "anxiety": np.array([r.gad7 for r in recs])}
    model = new_lexical_model(prep, config)
    tasks = model.head_config.tasks
    n = len(recs)
    bs = effective_batch_voices(config.batch_voices, n, config.min_batch_voices)
    plan = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        perm = rng.permutation(n)
        plan.append([perm[i:i + bs] for i in range(0, n, bs)])
    weights = LossWeights(config.coral_weight, 0.0)

    def make_shards(epoch, bi, idx):
        def fn(P):
            rng = np.random.default_rng([config.seed, epoch, bi, 11])
            _, _, scores = forward(model, {"lex": x_train[idx]}, True, rng, P)
            grouped = {t: scores[t].reshape(-1, 1) for t in tasks}
            labels = {t: y[t][idx] for t in tasks}
            return combined_supervised_loss(grouped, labels, {t: P[f"coral.{t}"] for t in tasks}, weights)

        return [fn]

    val_recs = dataset.split("validation")
    x_val = prep.lexical("validation")

    def evaluate(m):
        s = lexical_scores(m, x_val)
        ss = ScoreSet([ScoreEntry(r.recording_id, r.voice_id, float(a), float(b), r.phq9, r.gad7)
                       for r, (a, b) in zip(val_recs, s)])
        sn, auc = _sn_sp(ss)
        return sn["depression"], sn, {"val_auc": auc}

    return _fit(model, plan, make_shards, evaluate, config)


# distillation -------------------------------------------------------------------


@dataclass
class TeacherScores:
    """Per-recording teacher scores with the models that produced them."""

    scores: dict  # (recording_id, task) -> float
    provenance: dict

    def voice_scores(self, dataset: Dataset, split="train") -> dict:
        """Mean teacher score per voice and task over the voice's recordings."""
        out = {}
        for v in dataset.voices(split):
            recs = dataset.voice_records(v, split)
            out[v] = {t: float(np.mean([self.scores[(r.recording_id, t)] for r in recs])) for t in TASKS}
        return out

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for (rid, task), score in sorted(self.scores.items()):
                fh.write(json.dumps({"recording_id": rid, "task": task, "score": score}, sort_keys=True) + "\n")
        with open(path.with_suffix(path.suffix + ".meta.json"), "w", encoding="utf-8") as fh:
            json.dump(self.provenance, fh, indent=2, sort_keys=True)
        return path

    @classmethod
    def read_jsonl(cls, path) -> "TeacherScores":
        path = Path(path)
        scores = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    scores[(obj["recording_id"], obj["task"])] = float(obj["score"])
        meta = path.with_suffix(path.suffix + ".meta.json")
        provenance = json.loads(meta.read_text()) if meta.is_file() else {}
        return cls(scores, provenance)


def compose_teacher(audio_ckpt: Checkpoint, lexical_ckpt: Checkpoint, dataset: Dataset,
                    prep: PreparedData | None = None, splits=("train", "validation", "test")) -> TeacherScores:
    """audio score + text score - (training-split mean text score), per task and recording."""
    prep = prep or PreparedData(dataset)
    text = {s: lexical_scores(lexical_ckpt, prep.lexical(s)) for s in set(splits) | {"train"}}
    tasks = lexical_ckpt.head_config.tasks
    train_mean = text["train"].mean(axis=0)
    scores = {}
    for s in splits:
        audio = prep.segments(s).score(audio_ckpt, prep.threads)
        for i, (rec, entry) in enumerate(zip(dataset.split(s), audio.entries)):
            a = {"depression": entry.score_dep, "anxiety": entry.score_anx}
            for j, t in enumerate(tasks):
                scores[(rec.recording_id, t)] = float(a[t] + text[s][i, j] - train_mean[j])
    provenance = {"audio_model_id": audio_ckpt.config_hash(), "lexical_model_id": lexical_ckpt.config_hash(),
                  "train_mean_text_score": {t: float(train_mean[j]) for j, t in enumerate(tasks)}}
    return TeacherScores(scores, provenance)


def teacher_score_set(teacher: TeacherScores, dataset: Dataset, split: str) -> ScoreSet:
    return ScoreSet([ScoreEntry(r.recording_id, r.voice_id, teacher.scores[(r.recording_id, "depression")],
                                teacher.scores[(r.recording_id, "anxiety")], r.phq9, r.gad7)
                     for r in dataset.split(split)])


def distill_student(teacher: TeacherScores, init_ckpt: Checkpoint, config: TrainRunConfig, dataset: Dataset,
                    prep: PreparedData | None = None, shuffle_teacher: bool = False) -> TrainResult:
    """Train an audio student to match teacher scores, plus weighted score variance.

    Labels never enter the objective; they are only used by validation.
    ``shuffle_teacher`` permutes teacher scores across training voices (a
    negative control).
    """
    prep = prep or PreparedData(dataset, config.threads)
    store = prep.clips("train")
    missing = [r.recording_id for r in dataset.split("train")
               if any((r.recording_id, t) not in teacher.scores for t in TASKS)]
    if missing:
        raise ValueError(f"teacher scores missing for {len(missing)} training recordings, e.g. {missing[0]}")
    per_voice = teacher.voice_scores(dataset, "train")
    if shuffle_teacher:
        voices = list(per_voice)
        perm = np.random.default_rng([config.seed, 404]).permutation(len(voices))
        per_voice = {v: per_voice[voices[p]] for v, p in zip(voices, perm)}
    model = init_ckpt.copy()
    tasks = model.head_config.tasks
    branch = model.branches[0]["name"]
    plan = plan_epochs(store, config)
    w = config.weights

    def make_shards(epoch, bi, batch):
        fns = []
        for si, items in enumerate(_shards(batch, config.shard_voices)):
            frac = len(items) / len(batch)

            def fn(P, items=items, frac=frac, si=si):
                feats = _pair_features(store, items)
                V = feats.shape[0]
                rng = np.random.default_rng([config.seed, epoch, bi, si, 13])
                _, _, scores = forward(model, {branch: feats.reshape(V * 2, *feats.shape[2:])}, True, rng, P)
                loss = None
                for t in tasks:
                    target = np.repeat([per_voice[v][t] for v, _, _ in items], 2)
                    s = scores[t]
                    term = (kd_loss(s, target) * w.kd + svl_groups(s.reshape(V, 2)) * w.kd_svl) * (1.0 / len(tasks))
                    loss = term if loss is None else loss + term
                return loss * frac

            fns.append(fn)
        return fns

    return _fit(model, plan, make_shards, _supervised_eval(prep.segments("validation"), config.threads), config)


# embedding matching ----------------------------------------------------------------


def random_projection(in_dim: int, out_dim: int, seed: int) -> np.ndarray:
    """Fixed Gaussian map ``(out_dim, in_dim)`` with variance-preserving scale."""
    return np.random.default_rng([seed, 77]).standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)


def llma_targets(lexical_ckpt: Checkpoint, prep: PreparedData, split: str, proj: np.ndarray | None):
    """Per-recording teacher embeddings (projected when dimensions differ)."""
    emb = lexical_embeddings(lexical_ckpt, prep.lexical(split))
    return emb if proj is None else emb @ proj.T


def train_llma(lexical_ckpt: Checkpoint, dataset: Dataset, config: TrainRunConfig,
               prep: PreparedData | None = None) -> TrainResult:
    """Fit a dedicated audio encoder's pooled output to frozen lexical embeddings.

    The teacher and the projection are constants; only the new encoder's
    trainable parameters receive gradients. Epochs are selected by the
    lowest validation embedding loss, so labels are never read.
    """
    prep = prep or PreparedData(dataset, config.threads)
    store = prep.clips("train")
    enc_cfg = EncoderConfig(**config.llma_encoder)
    teacher_dim = lexical_ckpt.branches[0]["config"]["hidden_dims"][-1]
    proj = None
    if teacher_dim != enc_cfg.out_dim:
        proj = random_projection(teacher_dim, enc_cfg.out_dim, config.seed)
    model = build_model([("llma", enc_cfg)], None, seed=config.seed + 1000, norms={"llma": prep.audio_norm()})
    if proj is not None:
        model.params["llma.proj"] = proj.astype(np.float32)

    train_t = llma_targets(lexical_ckpt, prep, "train", proj)
    row = {r.recording_id: i for i, r in enumerate(dataset.split("train"))}
    voice_target = {v: np.mean([train_t[row[r.recording_id]] for r in dataset.voice_records(v, "train")], axis=0)
                    for v in store.voices}
    branch = model.branches[0]
    plan = plan_epochs(store, config)

    def make_shards(epoch, bi, batch):
        fns = []
        for si, items in enumerate(_shards(batch, config.shard_voices)):
            frac = len(items) / len(batch)

            def fn(P, items=items, frac=frac, si=si):
                feats = _pair_features(store, items)
                V = feats.shape[0]
                rng = np.random.default_rng([config.seed, epoch, bi, si, 17])
                pooled = branch_forward(P, branch, feats.reshape(V * 2, *feats.shape[2:]), True, rng)
                target = np.repeat(np.stack([voice_target[v] for v, _, _ in items]), 2, axis=0)
                return llma_loss(pooled, target, config.llma_mode) * frac

            fns.append(fn)
        return fns

    val = prep.segments("validation")
    val_t = llma_targets(lexical_ckpt, prep, "validation", proj)

    def evaluate(m):
        P = {k: Tensor(v) for k, v in m.params.items()}
        # first segment of each validation recording against its teacher embedding
        pooled = np.stack([branch_forward(P, branch, f[:1]).data[0] for f in val.features])
        mse = float(llma_loss(pooled.astype(np.float64), val_t, "mse").data)
        cos = float(llma_loss(pooled.astype(np.float64), val_t, "cosine").data)
        value = mse if config.llma_mode == "mse" else cos
        return value, {}, {"val_mse": mse, "val_cosine": cos}

    return _fit(model, plan, make_shards, evaluate, config, maximize=False)


# head fine-tuning -------------------------------------------------------------


def fuse(bio_ckpt: Checkpoint, llma_ckpt: Checkpoint, head: TrunkHeadConfig, seed: int) -> Checkpoint:
    """Two frozen encoders side by side under a fresh trunk and heads."""
    bio_branch = next(b for b in bio_ckpt.branches if b["name"] == "enc")
    llma_branch = llma_ckpt.branches[0]
    fused = build_model([("enc", EncoderConfig(**bio_branch["config"])),
                         ("llma", EncoderConfig(**llma_branch["config"]))], head, seed=seed + 2000)
    for src, prefix in ((bio_ckpt, "enc."), (llma_ckpt, "llma.")):
        for k, v in src.params.items():
            if k.startswith(prefix) and k in fused.params:
                fused.params[k] = v.copy()
    fused.freeze("enc.")
    fused.freeze("llma.")
    return fused


def _frozen_pooled(model: Checkpoint, branch: dict, frames: np.ndarray, starts) -> dict:
    """Eval-mode pooled outputs of a frozen audio branch for clips at ``starts`` (hop units)."""
    P = {k: Tensor(v) for k, v in model.params.items() if k.startswith(branch["name"] + ".")}
    cfg = EncoderConfig(**branch["config"])
    per_frame = audio_frames(P, branch["name"], cfg, frames).data.astype(np.float64)
    csum = np.vstack([np.zeros((1, per_frame.shape[1])), np.cumsum(per_frame, axis=0)])
    return {f: (csum[f + FRAMES] - csum[f]) / FRAMES for f in starts}


def finetune_head(bio_ckpt: Checkpoint, llma_ckpt: Checkpoint, dataset: Dataset, config: TrainRunConfig,
                  prep: PreparedData | None = None) -> TrainResult:
    """Train trunk, heads and ordinal biases on concatenated frozen encoder embeddings.

    Encoders never change, so each clip's pooled features are computed once
    from the voice's per-frame encoder outputs before training starts.
    """
    prep = prep or PreparedData(dataset, config.threads)
    store = prep.clips("train")
    model = fuse(bio_ckpt, llma_ckpt, TrunkHeadConfig(**config.head), config.seed)
    plan = plan_epochs(store, config)
    tasks = model.head_config.tasks
    branches = model.branches

    needed: dict[str, set] = {}
    for batches in plan:
        for batch in batches:
            for v, a, b in batch:
                needed.setdefault(v, set()).update((a, b))
    cache: dict[tuple[str, int], np.ndarray] = {}
    for v, starts in needed.items():
        grid = sorted(s for s in starts if s % HOP == 0)
        parts = []
        for br in branches:
            pooled = _frozen_pooled(model, br, store.frames[v], [s // HOP for s in grid])
            off = [s for s in starts if s % HOP]
            if off:
                tail = _frozen_pooled(model, br, store.tail[v], [0])[0]
            parts.append(({s: pooled[s // HOP] for s in grid}, tail if off else None))
        for s in starts:
            cache[(v, s)] = np.concatenate([p[s] if s in p else t for p, t in parts]).astype(model.dtype)

    weights = LossWeights(config.coral_weight, 0.0)

    def make_shards(epoch, bi, batch):
        def fn(P):
            z = np.stack([cache[(v, s)] for v, a, b in batch for s in (a, b)])
            rng = np.random.default_rng([config.seed, epoch, bi, 19])
            _, scores = head_forward(P, model.head_config, Tensor(z), True, rng)
            labels = store.label_arrays([v for v, _, _ in batch])
            grouped = {t: scores[t].reshape(len(batch), 2) for t in tasks}
            return combined_supervised_loss(grouped, labels, {t: P[f"coral.{t}"] for t in tasks}, weights)

        return [fn]

    val = prep.segments("validation")
    val_z = []
    for f in val.features:
        P = {k: Tensor(v) for k, v in model.params.items()}
        val_z.append(concat([branch_forward(P, br, f) for br in branches], axis=-1).data)

    def head_fn(m):
        P = {k: Tensor(v) for k, v in m.params.items()}

        def fn(i, feats):
            _, scores = head_forward(P, m.head_config, Tensor(val_z[i]))
            return np.stack([scores[t].data for t in tasks], axis=1).astype(np.float64)

        return fn

    return _fit(model, plan, make_shards, _supervised_eval(val, config.threads, head_fn), config)


def count_head_params(ckpt: Checkpoint) -> tuple[int, int]:
    """(trunk + heads + ordinal biases, all parameters excluding input normalization)."""
    return ckpt.count(("trunk.", "head.", "coral.")), ckpt.count()
