from __future__ import annotations

import numpy as np

from .autograd import Tensor


def grad_check(fn, params: dict, epsilon: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``fn(P)`` must build a scalar :class:`Tensor` from the dict of parameter
    tensors ``P``; it is re-evaluated with perturbed arrays for the finite
    differences, so any randomness inside must be seeded. ``params`` maps
    names to arrays; every entry is treated as differentiable. With
    ``max_entries`` a seeded random subset of coordinates per parameter is
    probed instead of all of them.

    The error for one coordinate is ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    arrays = {k: np.array(v, copy=True) for k, v in params.items()}
    P = {k: Tensor(v, True) for k, v in arrays.items()}
    out = fn(P)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite function value at the probe point")
    out.backward()
    rng = np.random.default_rng(seed)

    def value():
        res = fn({k: Tensor(v) for k, v in arrays.items()}).data
        if not np.all(np.isfinite(res)):
            raise FloatingPointError("non-finite function value during finite differences")
        return float(res)

    worst = 0.0
    for name, arr in arrays.items():
        g_ad = P[name].grad if P[name].grad is not None else np.zeros_like(arr)
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = value()
            flat[i] = orig - epsilon
            down = value()
            flat[i] = orig
            fd = (up - down) / (2 * epsilon)
            ad = float(g_ad.reshape(-1)[i])
            err = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            worst = max(worst, err)
    return worst
