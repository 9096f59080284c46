"""Central-difference gradient verification."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .rng import stream
from .tensor import NonFiniteError, Tape, Tensor, no_grad


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    n_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f(params)`` must return a scalar Tensor. Up to ``n_samples`` coordinates
    are drawn (seed-deterministically) across all parameters; the error per
    coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    params = list(params)
    for p in params:
        p.requires_grad = True
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    rng = stream(seed, "gradcheck")
    if total <= n_samples:
        flat_idx = np.arange(total)
    else:
        flat_idx = np.sort(rng.choice(total, size=n_samples, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for k in flat_idx:
        pi = int(np.searchsorted(offsets, k, side="right") - 1)
        p = params[pi]
        j = int(k - offsets[pi])
        flat = p.data.reshape(-1)
        orig = flat[j].copy()
        flat[j] = orig + p.data.dtype.type(eps)
        hi = flat[j].astype(np.float64)
        with no_grad():
            f_hi = float(f(params).data)
        flat[j] = orig - p.data.dtype.type(eps)
        lo = flat[j].astype(np.float64)
        with no_grad():
            f_lo = float(f(params).data)
        flat[j] = orig
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise NonFiniteError("non-finite function value during grad_check")
        numeric = (f_hi - f_lo) / (hi - lo)
        a = float(analytic[pi].reshape(-1)[j])
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
