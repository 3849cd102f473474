"""Adam with bias correction and the one-cycle cosine-annealing schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .nn import Param


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Param], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad
            if g.shape != p.value.shape:
                raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.value.shape}")
            if name not in self._m:
                self._m[name] = np.zeros_like(p.value)
                self._v[name] = np.zeros_like(p.value)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / c1
            vhat = v / c2
            p.value -= lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class OneCycleSchedule:
    """Linear warmup from lr_init/25 to the lr_init peak over the first
    warmup_frac of the run, then cosine annealing down to lr_final."""

    lr_init: float
    lr_final: float
    total_steps: int
    warmup_frac: float = 0.1

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.total_steps))

    def lr_at(self, step: int) -> float:
        if step < 0 or step > self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        w = self.warmup_steps
        lr0 = self.lr_init / 25.0
        if step == self.total_steps:
            return self.lr_final
        if step <= w:
            if step == w:  # peak, exact by construction
                return self.lr_init
            return lr0 + (self.lr_init - lr0) * (step / w)
        frac = (step - w) / (self.total_steps - w)
        return self.lr_final + (self.lr_init - self.lr_final) * 0.5 * (
            1.0 + float(np.cos(np.pi * frac))
        )


# learning-rate profiles for large outdoor scenes vs small indoor ones
OUTDOOR_LR = (0.01, 1e-6)
INDOOR_LR = (0.001, 1e-5)
