"""Screening network: LoRA-adapted frame encoders, a shared trunk and per-task heads.

A network is a list of named branches whose pooled outputs are
concatenated and fed to the trunk. Audio branches run a dense stack on
every log-mel frame and mean-pool over time; lexical branches are a dense
stack over a fixed-length vector. Parameters live in a flat, ordered
name -> array mapping inside a :class:`Checkpoint`.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, concat, mish

TASKS = ("depression", "anxiety")
LEVELS = {"depression": 27, "anxiety": 21}
FORMAT_VERSION = 1


@dataclass
class EncoderConfig:
    input_mel_bins: int = 40
    frame_dense_dims: tuple = (40, 96, 96)
    pooling: str = "mean"
    frozen_base: bool = True
    lora_rank: int = 32
    lora_alpha: float = 64.0
    lora_dropout: float = 0.40

    def __post_init__(self):
        self.frame_dense_dims = tuple(int(d) for d in self.frame_dense_dims)
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ValueError("lora_dropout must lie in [0, 1)")
        if self.frame_dense_dims[0] != self.input_mel_bins:
            raise ValueError("first frame dense dim must equal input_mel_bins")
        if self.pooling != "mean":
            raise ValueError("only mean pooling is supported")

    @property
    def out_dim(self) -> int:
        return self.frame_dense_dims[-1]

    @property
    def lora_scale(self) -> float:
        return self.lora_alpha / self.lora_rank


@dataclass
class LexicalConfig:
    input_dim: int = 16
    hidden_dims: tuple = (96,)

    def __post_init__(self):
        self.hidden_dims = tuple(int(d) for d in self.hidden_dims)

    @property
    def out_dim(self) -> int:
        return self.hidden_dims[-1]


@dataclass
class TrunkHeadConfig:
    trunk_hidden: int = 256
    embed_dim: int = 64
    head_hidden: int = 128
    head_dropout: float = 0.40
    tasks: tuple = TASKS

    def __post_init__(self):
        self.tasks = tuple(self.tasks)


_BRANCH_TYPES = {"audio": EncoderConfig, "lexical": LexicalConfig}


def _branch_cfg(branch: dict):
    return _BRANCH_TYPES[branch["kind"]](**branch["config"])


# ------------------------------------------------------------------ checkpoint


class Checkpoint:
    """Parameters, their trainable flags, and the network config that uses them."""

    def __init__(self, config: dict, params: dict, trainable=()):
        self.config = config
        self.params = dict(params)
        self.trainable = set(trainable)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def branches(self) -> list[dict]:
        return self.config["branches"]

    @property
    def head_config(self) -> TrunkHeadConfig | None:
        head = self.config.get("head")
        return TrunkHeadConfig(**head) if head is not None else None

    def copy(self) -> "Checkpoint":
        return Checkpoint(json.loads(json.dumps(self.config)), {k: v.copy() for k, v in self.params.items()},
                          self.trainable)

    def astype(self, dtype) -> "Checkpoint":
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in out.params.items()}
        return out

    def tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v, k in self.trainable) for k, v in self.params.items()}

    def no_decay(self) -> set[str]:
        return {k for k in self.params if k.startswith("coral.")}

    def freeze(self, prefix: str = "") -> None:
        self.trainable = {k for k in self.trainable if not k.startswith(prefix)}

    def count(self, prefixes=None, trainable_only=False) -> int:
        total = 0
        for k, v in self.params.items():
            if ".norm_" in k:
                continue
            if trainable_only and k not in self.trainable:
                continue
            if prefixes is None or any(k.startswith(p) for p in prefixes):
                total += v.size
        return total

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.config, sort_keys=True).encode()).hexdigest()[:16]

    # ------------------------------------------------------------ files
    def save(self, path) -> Path:
        entries = [(k, v, {"trainable": k in self.trainable}) for k, v in self.params.items()]
        header = {"format_version": FORMAT_VERSION, "kind": "checkpoint", "config": self.config,
                  "config_hash": self.config_hash()}
        return _write_blob(path, header, entries)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        header, arrays = _read_blob(path)
        if header.get("kind") != "checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        trainable = {e["name"] for e in header["params"] if e["trainable"]}
        return cls(header["config"], arrays, trainable)


def _write_blob(path, header: dict, entries) -> Path:
    """Layout: u64 LE header length | JSON header | float32 LE payload."""
    path = Path(path)
    meta, offset, chunks = [], 0, []
    for name, arr, extra in entries:
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        meta.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(buf), **extra})
        chunks.append(buf)
        offset += len(buf)
    header = dict(header, params=meta)
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)
    return path


def _read_blob(path):
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        payload = fh.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    arrays = {}
    for e in header["params"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return header, arrays


# -------------------------------------------------------------- initializers


def _dense(rng, out_dim, in_dim, dtype):
    return (rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)).astype(dtype)


def init_audio_branch(name, cfg: EncoderConfig, rng, norm=None, dtype=np.float32):
    params, trainable = {}, set()
    mean, std = norm if norm is not None else (np.zeros(cfg.input_mel_bins), np.ones(cfg.input_mel_bins))
    params[f"{name}.norm_mean"] = np.asarray(mean, dtype=dtype)
    params[f"{name}.norm_std"] = np.asarray(std, dtype=dtype)
    dims = cfg.frame_dense_dims
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        p = f"{name}.l{i}"
        params[f"{p}.W"] = _dense(rng, d_out, d_in, dtype)
        params[f"{p}.b"] = np.zeros(d_out, dtype=dtype)
        params[f"{p}.lora_A"] = (rng.standard_normal((cfg.lora_rank, d_in)) * 0.01).astype(dtype)
        params[f"{p}.lora_B"] = np.zeros((d_out, cfg.lora_rank), dtype=dtype)
        trainable |= {f"{p}.lora_A", f"{p}.lora_B"}
        if not cfg.frozen_base:
            trainable |= {f"{p}.W", f"{p}.b"}
    return params, trainable


def init_lexical_branch(name, cfg: LexicalConfig, rng, norm=None, dtype=np.float32):
    params, trainable = {}, set()
    mean, std = norm if norm is not None else (np.zeros(cfg.input_dim), np.ones(cfg.input_dim))
    params[f"{name}.norm_mean"] = np.asarray(mean, dtype=dtype)
    params[f"{name}.norm_std"] = np.asarray(std, dtype=dtype)
    dims = (cfg.input_dim,) + cfg.hidden_dims
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{name}.l{i}.W"] = _dense(rng, d_out, d_in, dtype)
        params[f"{name}.l{i}.b"] = np.zeros(d_out, dtype=dtype)
        trainable |= {f"{name}.l{i}.W", f"{name}.l{i}.b"}
    return params, trainable


def init_head(in_dim, cfg: TrunkHeadConfig, rng, dtype=np.float32):
    params = {
        "trunk.l0.W": _dense(rng, cfg.trunk_hidden, in_dim, dtype),
        "trunk.l0.b": np.zeros(cfg.trunk_hidden, dtype=dtype),
        "trunk.l1.W": _dense(rng, cfg.embed_dim, cfg.trunk_hidden, dtype),
        "trunk.l1.b": np.zeros(cfg.embed_dim, dtype=dtype),
    }
    for task in cfg.tasks:
        params[f"head.{task}.l0.W"] = _dense(rng, cfg.head_hidden, cfg.embed_dim, dtype)
        params[f"head.{task}.l0.b"] = np.zeros(cfg.head_hidden, dtype=dtype)
        # no output bias: it would duplicate the ordinal biases
        params[f"head.{task}.out.W"] = _dense(rng, 1, cfg.head_hidden, dtype)
        params[f"coral.{task}"] = np.zeros(LEVELS[task], dtype=dtype)
    return params, set(params)


def build_model(branches: list[tuple[str, object]], head: TrunkHeadConfig | None = None, seed: int = 0,
                norms: dict | None = None, dtype=np.float32) -> Checkpoint:
    """Create a freshly initialized network.

    ``branches`` is a list of ``(name, EncoderConfig | LexicalConfig)``;
    ``norms`` optionally maps branch names to input ``(mean, std)``.
    """
    rng = np.random.default_rng(seed)
    norms = norms or {}
    params, trainable, cfg_branches = {}, set(), []
    for name, cfg in branches:
        if isinstance(cfg, EncoderConfig):
            p, t = init_audio_branch(name, cfg, rng, norms.get(name), dtype)
            kind = "audio"
        else:
            p, t = init_lexical_branch(name, cfg, rng, norms.get(name), dtype)
            kind = "lexical"
        params.update(p)
        trainable |= t
        cfg_branches.append({"name": name, "kind": kind, "config": asdict(cfg)})
    config = {"branches": cfg_branches, "head": None}
    if head is not None:
        in_dim = sum(cfg.out_dim for _, cfg in branches)
        p, t = init_head(in_dim, head, rng, dtype)
        params.update(p)
        trainable |= t
        config["head"] = asdict(head)
    # JSON-normalized so a loaded checkpoint compares (and hashes) equal
    return Checkpoint(json.loads(json.dumps(config)), params, trainable)


def build_audio_model(encoder: EncoderConfig | None = None, head: TrunkHeadConfig | None = None, seed: int = 0,
                      norm=None) -> Checkpoint:
    return build_model([("enc", encoder or EncoderConfig())], head or TrunkHeadConfig(), seed,
                       {"enc": norm} if norm is not None else None)


# ------------------------------------------------------------------- forward


def dropout_mask(rng, shape, p, dtype):
    keep = 1.0 - p
    return (rng.random(shape, dtype=np.float32) < keep).astype(dtype) * dtype.type(1.0 / keep)


def lora_linear(x: Tensor, W: Tensor, b: Tensor, A: Tensor, B: Tensor, alpha: float, rank: int,
                dropout=None) -> Tensor:
    """``x W^T + b + (alpha / rank) * drop(x) A^T B^T`` for row-major batches ``x``.

    ``dropout`` is an optional mask multiplied into the adapter input only.
    """
    if x.shape[-1] != W.shape[1] or A.shape != (rank, W.shape[1]) or B.shape != (W.shape[0], rank):
        raise ValueError(f"shape mismatch: x{x.shape} W{W.shape} A{A.shape} B{B.shape}")
    base = x @ W.T + b
    xa = x if dropout is None else x * dropout
    return base + ((xa @ A.T) @ B.T) * (alpha / rank)


def audio_frames(P: dict, name: str, cfg: EncoderConfig, frames: np.ndarray, train=False, rng=None) -> Tensor:
    """Per-frame encoder outputs for a 2-D ``(N, mel_bins)`` frame matrix."""
    if frames.shape[-1] != cfg.input_mel_bins:
        raise ValueError(f"expected {cfg.input_mel_bins} mel bins, got {frames.shape[-1]}")
    dtype = P[f"{name}.norm_mean"].dtype
    x = (frames.astype(dtype, copy=False) - P[f"{name}.norm_mean"].data) / P[f"{name}.norm_std"].data
    h = Tensor(x.astype(dtype, copy=False))
    for i in range(len(cfg.frame_dense_dims) - 1):
        p = f"{name}.l{i}"
        mask = dropout_mask(rng, h.shape, cfg.lora_dropout, dtype) if train and cfg.lora_dropout > 0 else None
        h = mish(lora_linear(h, P[f"{p}.W"], P[f"{p}.b"], P[f"{p}.lora_A"], P[f"{p}.lora_B"],
                             cfg.lora_alpha, cfg.lora_rank, mask))
    return h


def branch_forward(P: dict, branch: dict, inputs: np.ndarray, train=False, rng=None) -> Tensor:
    name, cfg = branch["name"], _branch_cfg(branch)
    if branch["kind"] == "audio":
        x = inputs if inputs.ndim == 3 else inputs[None]
        B, T, M = x.shape
        h = audio_frames(P, name, cfg, x.reshape(B * T, M), train, rng)
        return h.reshape(B, T, cfg.out_dim).mean(axis=1)
    x = inputs if inputs.ndim == 2 else inputs[None]
    dtype = P[f"{name}.norm_mean"].dtype
    h = Tensor(((x - P[f"{name}.norm_mean"].data) / P[f"{name}.norm_std"].data).astype(dtype))
    for i in range(len(cfg.hidden_dims)):
        h = mish(h @ P[f"{name}.l{i}.W"].T + P[f"{name}.l{i}.b"])
    return h


def head_forward(P: dict, cfg: TrunkHeadConfig, z: Tensor, train=False, rng=None):
    """Trunk and task heads on pooled features; returns (embedding, {task: scores})."""
    h = mish(z @ P["trunk.l0.W"].T + P["trunk.l0.b"])
    emb = h @ P["trunk.l1.W"].T + P["trunk.l1.b"]
    scores = {}
    for task in cfg.tasks:
        g = mish(emb @ P[f"head.{task}.l0.W"].T + P[f"head.{task}.l0.b"])
        if train and cfg.head_dropout > 0:
            g = g * dropout_mask(rng, g.shape, cfg.head_dropout, g.dtype)
        scores[task] = (g @ P[f"head.{task}.out.W"].T).reshape(-1)
    return emb, scores


def forward(model, inputs: dict, train: bool = False, rng=None, P: dict | None = None):
    """Full forward pass.

    ``inputs`` maps branch name to its input batch. Returns
    ``(pooled, embedding, scores)`` where ``pooled`` maps branch names to
    pooled features. ``P`` supplies parameter tensors (for gradients);
    otherwise constants are built from ``model``.
    """
    if train and rng is None:
        raise ValueError("train mode needs an rng for dropout")
    if P is None:
        P = {k: Tensor(v) for k, v in model.params.items()}
    pooled = {b["name"]: branch_forward(P, b, inputs[b["name"]], train, rng) for b in model.branches}
    head = model.head_config
    if head is None:
        return pooled, None, {}
    z = concat(list(pooled.values()), axis=-1) if len(pooled) > 1 else next(iter(pooled.values()))
    emb, scores = head_forward(P, head, z, train, rng)
    return pooled, emb, scores


def forward_model(checkpoint: Checkpoint, features: np.ndarray, train_mode: bool = False, seed: int = 0):
    """Score one segment's ``(T, mel_bins)`` features with an audio-only model.

    Returns ``(embedding, score_depression, score_anxiety)``.
    """
    rng = np.random.default_rng(seed) if train_mode else None
    branch = checkpoint.branches[0]["name"]
    _, emb, scores = forward(checkpoint, {branch: np.asarray(features)[None]}, train_mode, rng)
    return emb.data[0], float(scores["depression"].data[0]), float(scores["anxiety"].data[0])


def fit_norm(feature_blocks, eps: float = 1e-3):
    """Per-dimension mean and std over stacked feature rows."""
    total, sq, n = 0.0, 0.0, 0
    for block in feature_blocks:
        b = np.asarray(block, dtype=np.float64).reshape(-1, np.shape(block)[-1])
        total = total + b.sum(0)
        sq = sq + (b * b).sum(0)
        n += b.shape[0]
    mean = total / n
    std = np.sqrt(np.maximum(sq / n - mean * mean, 0.0)) + eps
    return mean, std
