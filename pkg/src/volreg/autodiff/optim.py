"""AdamW with a one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OneCycleSchedule:
    """Cosine warm-up from ``lr_min`` to ``lr_max`` then cosine anneal back.

    Step 0 and step ``total_steps - 1`` both sit at ``lr_min``; the peak is at
    ``round(pct_start * (total_steps - 1))``.
    """

    total_steps: int
    lr_max: float = 1e-3
    lr_min: float = 4e-5
    pct_start: float = 0.3
    step: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not 0.0 <= self.pct_start <= 1.0:
            raise ValueError("pct_start must lie in [0, 1]")

    @property
    def peak_step(self) -> int:
        return int(round(self.pct_start * (self.total_steps - 1)))

    def lr_at(self, t: int) -> float:
        last = self.total_steps - 1
        t = min(max(t, 0), last)
        peak = self.peak_step
        span = self.lr_max - self.lr_min
        if t <= peak:
            frac = t / peak if peak > 0 else 1.0
            return self.lr_min + span * 0.5 * (1.0 - math.cos(math.pi * frac))
        frac = (t - peak) / (last - peak)
        return self.lr_min + span * 0.5 * (1.0 + math.cos(math.pi * frac))

    def lr(self) -> float:
        return self.lr_at(self.step)

    def advance(self) -> None:
        self.step += 1


class AdamW:
    """Adam with decoupled weight decay (Loshchilov & Hutter)."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        missing = [p.name or f"#{i}" for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"parameters without gradient: {', '.join(missing[:5])}")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            out[f"adam.m.{key}"] = self.m[i]
            out[f"adam.v.{key}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for i, p in enumerate(self.params):
            key = p.name or str(i)
            self.m[i] = np.array(arrays[f"adam.m.{key}"], dtype=np.float64)
            self.v[i] = np.array(arrays[f"adam.v.{key}"], dtype=np.float64)
        self.t = t


def optimizer_step(optimizer: AdamW, schedule: OneCycleSchedule) -> float:
    """Apply one AdamW update at the scheduled rate and advance the schedule."""
    lr = schedule.lr()
    optimizer.step(lr)
    schedule.advance()
    return lr
