"""Bias-corrected Adam with optional element-wise clamping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    # per-parameter (lo, hi) bounds applied after each step
    clamp: dict = field(default_factory=dict)
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params[k]`` in place from ``grads[k]`` for every key in ``grads``.

        Raises ``NonFiniteGradient`` naming the parameter before touching anything.
        """
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {k}")
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            p = params[k]
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)
            if k in self.clamp:
                lo, hi = self.clamp[k]
                np.clip(p, lo, hi, out=p)
