"""Adam and exponential moving averages, updating numpy arrays in place."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class OptimizerState:
    """Adam moments for a fixed list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              lr: float | Sequence[float], betas=(0.9, 0.999), eps: float = 1e-8) -> OptimizerState:
    """One bias-corrected Adam update of ``params`` (modified in place).

    ``lr`` is one rate for every parameter or a sequence with one rate each.
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    lrs = [lr] * len(params) if np.isscalar(lr) else list(lr)
    if len(lrs) != len(params):
        raise ValueError("need one learning rate per parameter")
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v, rate in zip(params, grads, state.m, state.v, lrs):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        denom = np.sqrt(v / bc2)
        denom += eps
        p -= (rate / bc1 * m / denom).astype(p.dtype, copy=False)
    return state


@dataclass
class Adam:
    params: list[np.ndarray]
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState.zeros_like(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.state, self.params, grads, self.lr, self.betas, self.eps)


class EMA:
    """Shadow copies tracking ``shadow <- decay*shadow + (1-decay)*current``.

    With ``warmup`` the decay used at update ``t`` is ``min(decay, (1+t)/(10+t))``,
    so early shadows are not dominated by the initial values.
    """

    def __init__(self, params: Sequence[np.ndarray], decay: float = 0.999, warmup: bool = False):
        if not 0.0 <= decay < 1.0:
            raise ValueError("EMA decay must be in [0, 1)")
        self.params = list(params)
        self.decay = decay
        self.warmup = warmup
        self.updates = 0
        self.shadow = [p.copy() for p in self.params]

    def current_decay(self) -> float:
        t = self.updates
        return min(self.decay, (1 + t) / (10 + t)) if self.warmup else self.decay

    def update(self) -> None:
        d = self.current_decay()
        self.updates += 1
        for s, p in zip(self.shadow, self.params):
            s *= d
            s += (1 - d) * p

    def copy_to(self, targets: Sequence[np.ndarray] | None = None) -> None:
        for s, t in zip(self.shadow, self.params if targets is None else targets):
            t[...] = s
