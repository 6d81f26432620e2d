"""Adam with a polynomially decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr0: float = 1e-4
    decay_power: float = 0.9
    total_steps: int = 0  # 0 disables decay
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.t < 0:
            raise ValueError("step counter must be >= 0")


def poly_decay_lr(t: int, state: AdamState) -> float:
    """``lr0 * (1 - t/total_steps) ** power``, zero once ``t >= total_steps``."""
    if state.total_steps <= 0:
        return state.lr0
    if t >= state.total_steps:
        return 0.0
    return state.lr0 * (1.0 - t / state.total_steps) ** state.decay_power


class Adam:
    """Bias-corrected Adam over a name -> array mapping, updated in place."""

    def __init__(self, state: AdamState | None = None, **kwargs):
        self.state = state if state is not None else AdamState(**kwargs)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        s = self.state
        lr = poly_decay_lr(s.t, s)
        s.t += 1
        c1 = 1.0 - s.beta1 ** s.t
        c2 = 1.0 - s.beta2 ** s.t
        for name in sorted(grads):
            g = grads[name]
            p = params[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter {name} {p.shape}")
            m = s.m.get(name)
            if m is None:
                m = s.m[name] = np.zeros_like(p)
                s.v[name] = np.zeros_like(p)
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + s.epsilon)
        return lr


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, name: str = "param"):
    """Single-parameter convenience wrapper; returns ``(new_param, state)``."""
    p = np.array(param, dtype=np.float64, copy=True)
    Adam(state).step({name: p}, {name: np.asarray(grad, dtype=np.float64)})
    return p, state
