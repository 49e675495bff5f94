"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
64 unknown subcommand.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, dsp, synth
from .data import ManifestError, load_manifest
from .metrics import CUTOFFS, MetricError, ScoreSet, dp_thresholds, metrics_report, sn_eq_sp, write_roc_csv
from .nn.model import Checkpoint
from .training import loops
from .training.inference import SegmentStore

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2, 64

STAGE_ALIASES = {"llma": "llma_embed", "head": "head_finetune", "distill": "kd_student"}
TRAIN_STAGES = ("supervised_coral", "supervised_coral_svl", "lexical", "llma", "head")

log = logging.getLogger("ordinalvoice")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _json_dump(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def write_run_manifest(out_path, command: str, config: dict, seed, inputs, outputs, started: float) -> Path:
    return _json_dump({
        "command": command,
        "config": config,
        "config_hash": _hash(config),
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.time() - started, 3),
        "toolkit_version": __version__,
    }, out_path)


# ------------------------------------------------------------------- commands


def cmd_synth(args, started):
    cfg = synth.CorpusConfig.from_json(args.config) if args.config else synth.CorpusConfig()
    if args.seed is not None:
        cfg = synth.CorpusConfig(**{**cfg.__dict__, "master_seed": args.seed})
    out = Path(args.out)
    manifest = synth.generate_corpus(cfg, out, threads=args.threads)
    write_run_manifest(out / "run_manifest.json", "synth", cfg.__dict__, cfg.master_seed,
                       [args.config] if args.config else [], [manifest], started)
    print(manifest)


def cmd_features(args, started):
    ds = load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    recs = ds.split(args.split) if args.split else list(ds)
    for rec in recs:
        path = out / f"{rec.recording_id}.fbank"
        dsp.write_fbank(path, dsp.log_mel(dsp.read_wav(rec.audio_path)))
        written.append(path)
    write_run_manifest(out / "run_manifest.json", "features", {"split": args.split}, None, [args.manifest],
                       written, started)
    print(f"{len(written)} feature files in {out}")


def _train_config(args) -> loops.TrainRunConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    stage = STAGE_ALIASES.get(args.stage, args.stage)
    raw["stage"] = stage
    for key in ("manifest", "init_checkpoint", "audio_checkpoint", "lexical_checkpoint", "llma_checkpoint",
                "teacher_scores", "seed", "epochs"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    raw["threads"] = args.threads
    raw["out_dir"] = None  # per-epoch checkpoints are written by this command
    cfg = loops.TrainRunConfig.from_dict(raw)
    if cfg.manifest is None:
        raise ValueError("a manifest is required (--manifest or config field)")
    cfg.require_paths()
    return cfg


def _run_stage(cfg: loops.TrainRunConfig, dataset):
    prep = loops.PreparedData(dataset, cfg.threads)
    if cfg.stage in ("supervised_coral", "supervised_coral_svl"):
        init = Checkpoint.load(cfg.init_checkpoint) if cfg.init_checkpoint else None
        return loops.train_supervised(cfg, dataset, init, prep)
    if cfg.stage == "lexical":
        return loops.train_lexical(cfg, dataset, prep)
    if cfg.stage == "kd_student":
        teacher = loops.TeacherScores.read_jsonl(cfg.teacher_scores)
        return loops.distill_student(teacher, Checkpoint.load(cfg.init_checkpoint), cfg, dataset, prep)
    if cfg.stage == "llma_embed":
        return loops.train_llma(Checkpoint.load(cfg.lexical_checkpoint), dataset, cfg, prep)
    return loops.finetune_head(Checkpoint.load(cfg.audio_checkpoint), Checkpoint.load(cfg.llma_checkpoint),
                               dataset, cfg, prep)


def _train(args, started, command):
    cfg = _train_config(args)
    dataset = load_manifest(cfg.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = _run_stage(cfg, dataset)
    ckpt = result.checkpoint.save(out / "best.ckpt")
    history = result.write_history(out / "history.jsonl")
    inputs = [p for p in (cfg.manifest, cfg.init_checkpoint, cfg.audio_checkpoint, cfg.lexical_checkpoint,
                          cfg.llma_checkpoint, cfg.teacher_scores, args.config) if p]
    summary = {"best_epoch": result.best_epoch, "diverged": result.diverged, "initial": result.initial}
    _json_dump(summary, out / "summary.json")
    write_run_manifest(out / "run_manifest.json", command, cfg.to_dict(), cfg.seed, inputs,
                       [ckpt, history, out / "summary.json"], started)
    print(ckpt)
    if result.diverged:
        raise RuntimeError("training diverged; the last finite checkpoint was kept")


def cmd_train(args, started):
    _train(args, started, f"train --stage {args.stage}")


def cmd_distill(args, started):
    args.stage = "kd_student"
    _train(args, started, "distill")


def cmd_teacher(args, started):
    dataset = load_manifest(args.manifest)
    prep = loops.PreparedData(dataset, args.threads)
    teacher = loops.compose_teacher(Checkpoint.load(args.audio), Checkpoint.load(args.lexical), dataset, prep)
    out = teacher.write_jsonl(args.out)
    write_run_manifest(Path(str(out) + ".run_manifest.json"), "teacher", {}, None,
                       [args.manifest, args.audio, args.lexical], [out], started)
    print(out)


def cmd_score(args, started):
    dataset = load_manifest(args.manifest)
    ckpt = Checkpoint.load(args.checkpoint)
    if any(b["kind"] != "audio" for b in ckpt.branches) or ckpt.head_config is None:
        raise ValueError("score needs an audio checkpoint with task heads")
    ss = SegmentStore(dataset, args.split, args.threads).score(ckpt, args.threads)
    if args.per_voice:
        ss = ss.per_voice()
    out = ss.write_jsonl(args.out)
    write_run_manifest(Path(str(out) + ".run_manifest.json"), "score",
                       {"split": args.split, "per_voice": args.per_voice}, None,
                       [args.manifest, args.checkpoint], [out], started)
    print(out)


def cmd_eval(args, started):
    ss = ScoreSet.read_jsonl(args.scores)
    report = metrics_report(ss, per_voice=args.per_voice)
    outputs = [_json_dump(report, args.out)]
    if args.roc_dir:
        roc = Path(args.roc_dir)
        roc.mkdir(parents=True, exist_ok=True)
        for task, cutoffs in CUTOFFS.items():
            y_all = ss.labels(task)
            for k in cutoffs:
                y = (y_all >= k).astype(int)
                if 0 < y.sum() < y.size:
                    outputs.append(write_roc_csv(roc / f"roc_{task}_{k}.csv", ss.scores(task), y))
    write_run_manifest(Path(str(args.out) + ".run_manifest.json"), "eval", {"per_voice": args.per_voice}, None,
                       [args.scores], outputs, started)
    print(args.out)


def tune_report(ss: ScoreSet, method: str) -> dict:
    """Operating points per task: one Sn=Sp threshold per cutoff, or DP multi-class thresholds."""
    out = {"method": method, "tasks": {}}
    for task, cutoffs in CUTOFFS.items():
        s, labels = ss.scores(task), ss.labels(task)
        if method == "sn_eq_sp":
            points = []
            for k in cutoffs:
                y = (labels >= k).astype(int)
                if 0 < y.sum() < y.size:
                    op = sn_eq_sp(s, y)
                    points.append({"cutoff": k, "threshold": op.threshold, "sensitivity": op.sensitivity,
                                   "specificity": op.specificity, "sn_eq_sp": op.sn_eq_sp})
                else:
                    points.append({"cutoff": k, "error": "single class present"})
            out["tasks"][task] = points
        else:
            buckets = np.searchsorted(np.asarray(cutoffs), labels, side="right")
            K = len(cutoffs) + 1
            try:
                thresholds, recall = dp_thresholds(s, buckets, K)
                out["tasks"][task] = {"cutoffs": list(cutoffs), "thresholds": thresholds, "macro_recall": recall}
            except MetricError as exc:
                out["tasks"][task] = {"cutoffs": list(cutoffs), "error": str(exc)}
    return out


def cmd_tune(args, started):
    ss = ScoreSet.read_jsonl(args.scores)
    if args.per_voice:
        ss = ss.per_voice()
    out = _json_dump(tune_report(ss, args.method), args.out)
    write_run_manifest(Path(str(out) + ".run_manifest.json"), "tune", {"method": args.method}, None,
                       [args.scores], [out], started)
    print(out)


# --------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    p = _Parser(prog="ordinalvoice", description="Ordinal voice screening toolkit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("synth", cmd_synth, "generate a synthetic corpus")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)

    sp = add("features", cmd_features, "write log-mel feature files")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=("train", "validation", "test"))

    for name, fn in (("train", cmd_train), ("distill", cmd_distill)):
        sp = add(name, fn, "train a model stage" if name == "train" else "distill a student from teacher scores")
        if name == "train":
            sp.add_argument("--stage", required=True, choices=TRAIN_STAGES)
        sp.add_argument("--config")
        sp.add_argument("--manifest")
        sp.add_argument("--out", required=True)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--init", dest="init_checkpoint")
        sp.add_argument("--audio", dest="audio_checkpoint")
        sp.add_argument("--lexical", dest="lexical_checkpoint")
        sp.add_argument("--llma", dest="llma_checkpoint")
        sp.add_argument("--teacher", dest="teacher_scores")

    sp = add("teacher", cmd_teacher, "compose teacher scores")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--audio", required=True)
    sp.add_argument("--lexical", required=True)
    sp.add_argument("--out", required=True)

    sp = add("score", cmd_score, "score a manifest split")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", default="test", choices=("train", "validation", "test"))
    sp.add_argument("--per-voice", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "metrics report for a score file")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-voice", action="store_true")
    sp.add_argument("--roc-dir")

    sp = add("tune", cmd_tune, "choose operating thresholds")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--method", choices=("sn_eq_sp", "dp"), default="sn_eq_sp")
    sp.add_argument("--per-voice", action="store_true")
    return p


_INVALID = (ValueError, KeyError, FileNotFoundError, ManifestError, MetricError, json.JSONDecodeError)


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    commands = set(parser._subparsers._group_actions[0].choices)
    if not argv or argv[0] not in commands:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"unknown subcommand: {argv[0] if argv else '(none)'}; choose from {', '.join(sorted(commands))}",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    started = time.time()
    try:
        # BLAS stays single-threaded so results do not depend on --threads
        with threadpool_limits(limits=1), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            args.fn(args, started)
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())
