from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dawnlab.errors import NumericalError

ParamSet = dict[str, np.ndarray]


@dataclass
class AdamState:
    m: ParamSet = field(default_factory=dict)
    v: ParamSet = field(default_factory=dict)
    t: int = 0


def global_norm(grads: ParamSet) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_by_global_norm(grads: ParamSet, max_norm: float) -> ParamSet:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / (norm + 1e-12)
    return {k: g * scale for k, g in grads.items()}


def adam_step(
    params: ParamSet,
    grads: ParamSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParamSet, AdamState]:
    """One bias-corrected Adam update. Returns new params and the (mutated) state."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k!r}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    new = dict(params)
    for k, g in grads.items():
        g = g.astype(params[k].dtype, copy=False)
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        if state.m[k].shape != params[k].shape:
            raise ValueError(f"moment shape {state.m[k].shape} != param shape {params[k].shape} for {k!r}")
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new[k] = params[k] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return new, state


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`."""

    def __init__(self, lr: float, max_grad_norm: float | None = None):
        self.lr = lr
        self.max_grad_norm = max_grad_norm
        self.state = AdamState()

    def step(self, params: ParamSet, grads: ParamSet) -> ParamSet:
        if self.max_grad_norm is not None:
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError("non-finite gradient")
            grads = clip_by_global_norm(grads, self.max_grad_norm)
        params, self.state = adam_step(params, grads, self.state, self.lr)
        return params
