from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for :func:`adam_step`.

    ``m``/``v`` are allocated lazily on the first step so a fresh state can be
    created before the parameter list is known.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Optional[Sequence[Optional[np.ndarray]]],
              state: AdamState):
    """One bias-corrected Adam update, applied in place to ``params[i].data``.

    ``grads`` defaults to each parameter's ``.grad``; a missing gradient is
    treated as zero.
    """
    params = list(params)
    if grads is None:
        grads = [p.grad for p in params]
    grads = list(grads)
    if len(grads) != len(params):
        raise ContractError(f"got {len(grads)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ContractError(f"optimizer state tracks {len(state.m)} tensors, got {len(params)}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ContractError(
                f"shape mismatch for parameter {i}: param {p.shape}, grad {g.shape}, "
                f"state {state.m[i].shape}"
            )
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype, copy=False)
    return params, state
