"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` rebuilds the scalar output from the current values of ``params``.
    With ``samples`` set, that many coordinates are checked, spread
    round-robin over the tensors; otherwise every coordinate is checked.
    """
    for p in params:
        p.grad = None
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    if samples is None:
        coords = [(k, idx) for k, p in enumerate(params) for idx in np.ndindex(p.shape)]
    else:
        rng = rng or np.random.default_rng(0)
        coords = []
        for s in range(samples):
            k = s % len(params)
            flat = int(rng.integers(params[k].data.size))
            coords.append((k, np.unravel_index(flat, params[k].shape)))

    worst = 0.0
    for k, idx in coords:
        p = params[k]
        saved = p.data[idx]
        p.data[idx] = saved + h
        up = fn().item()
        p.data[idx] = saved - h
        down = fn().item()
        p.data[idx] = saved
        numeric = (up - down) / (2.0 * h)
        worst = max(worst, relative_error(float(analytic[k][idx]), numeric))
    for p in params:
        p.grad = None
    return worst
