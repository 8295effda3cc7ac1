"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamWState:
    """First/second moment buffers per parameter, plus the step counter."""

    def __init__(self, params):
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adamw_step(
    params,
    grads,
    state: AdamWState,
    lr: float = 2e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    weight_decay: float = 1e-4,
    eps: float = 1e-8,
) -> AdamWState:
    """One in-place AdamW update over ``params``.

    Weight decay is decoupled (applied directly to the parameter, scaled by
    lr, independent of the moments). Moments are bias-corrected by
    1 - beta^t. Parameter tensors keep their identity; only ``.data``
    changes.
    """
    if lr <= 0:
        raise ValueError("adamw_step requires lr > 0")
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        gd = g.data if isinstance(g, Tensor) else np.asarray(g)
        if gd.shape != p.data.shape:
            raise ValueError(
                f"param/grad shape mismatch: {p.data.shape} vs {gd.shape}"
            )
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        gd = g.data if isinstance(g, Tensor) else np.asarray(g)
        gd = gd.astype(p.data.dtype, copy=False)
        if weight_decay != 0.0:
            p.data -= lr * weight_decay * p.data
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gd
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gd * gd
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
