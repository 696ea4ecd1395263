"""AdamW with decoupled weight decay, and the EMA shadow copy of parameters."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, state: OptimizerState, lr: float) -> None:
    """One AdamW update in place, reading each parameter's `.grad`.

    Weight decay is decoupled: applied directly to the weights, never routed
    through the moment estimates.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        grad = p.grad
        if grad is None:
            grad = np.zeros_like(p.data)
        if grad.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: grad {grad.shape} vs param {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def ema_init(params: dict) -> dict:
    return {name: p.data.copy() for name, p in params.items()}


def ema_update(ema: dict, params: dict, decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * params, per tensor, in place."""
    for name, p in params.items():
        shadow = ema[name]
        if shadow.shape != p.data.shape:
            raise ShapeMismatch(f"{name}: ema {shadow.shape} vs param {p.data.shape}")
        shadow *= decay
        shadow += (1.0 - decay) * p.data
