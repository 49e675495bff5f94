"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import _read_blob, _write_blob


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def save(self, path):
        entries = [(f"m/{k}", a, {}) for k, a in self.m.items()] + [(f"v/{k}", a, {}) for k, a in self.v.items()]
        header = {"format_version": 1, "kind": "optimizer",
                  "hyper": {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                            "weight_decay": self.weight_decay, "t": self.t}}
        return _write_blob(path, header, entries)

    @classmethod
    def load(cls, path) -> "OptimizerState":
        header, arrays = _read_blob(path)
        if header.get("kind") != "optimizer":
            raise ValueError(f"{path}: not an optimizer state file")
        state = cls(**header["hyper"])
        for name, arr in arrays.items():
            slot, key = name.split("/", 1)
            getattr(state, slot)[key] = arr
        return state


def adamw_step(params: dict, grads: dict, state: OptimizerState, no_decay=()) -> None:
    """Update ``params`` in place from ``grads``; names in ``no_decay`` skip weight decay.

    Parameters missing from ``grads`` (or with ``None`` gradients) are left
    untouched and their moments are not advanced.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if g is None:
            continue
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {theta.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay and name not in no_decay:
            update = update + state.weight_decay * theta
        theta -= (state.lr * update).astype(theta.dtype, copy=False)
