"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, index, h: float = 1e-6) -> float:
    orig = t.data[index]
    t.data[index] = orig + h
    plus = fn().item()
    t.data[index] = orig - h
    minus = fn().item()
    t.data[index] = orig
    return (plus - minus) / (2.0 * h)


def max_rel_error(fn: Callable[[], Tensor], inputs: Sequence[Tensor], probes: int = 10,
                  h: float = 1e-6, seed: int = 0) -> float:
    """Worst relative error between the tape gradient and finite differences.

    ``fn`` must rebuild the scalar output from ``inputs`` on every call.
    Relative error is ``|a - n| / max(|a| + |n|, floor)`` with a small floor
    so coordinates whose true gradient is ~0 compare absolutely.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.grad = None
    out = fn()
    backward(out, params=inputs)
    worst = 0.0
    for t in inputs:
        analytic = t.grad.copy()
        for _ in range(probes):
            idx = tuple(int(rng.integers(n)) for n in t.shape)
            num = numerical_grad(fn, t, idx, h)
            a = float(analytic[idx])
            err = abs(a - num) / max(abs(a) + abs(num), 1e-6)
            worst = max(worst, err)
    return worst
