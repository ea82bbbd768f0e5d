"""AdamW with an inverse power learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass
class InverseLR:
    """``lr * (1 - warmup**(step+1)) * (1 + step / inv_gamma) ** -power``.

    ``warmup=0`` disables the warmup factor.
    """

    inv_gamma: float = 1e6
    power: float = 0.5
    warmup: float = 0.0

    def factor(self, step: int) -> float:
        warm = 1.0 - self.warmup ** (step + 1) if self.warmup > 0 else 1.0
        return warm * (1.0 + step / self.inv_gamma) ** -self.power


class AdamW:
    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-3, schedule: InverseLR | None = None):
        self.params: list[tuple[str, Tensor]] = list(named_params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.schedule = schedule or InverseLR()
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def current_lr(self) -> float:
        return self.lr * self.schedule.factor(self.step_count)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        b1, b2 = self.betas
        lr = self.current_lr()
        self.step_count += 1
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data *= 1 - lr * self.weight_decay
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, _ in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params:
            self.m[name] = np.asarray(state[f"m.{name}"], dtype=p.dtype).copy()
            self.v[name] = np.asarray(state[f"v.{name}"], dtype=p.dtype).copy()
        self.step_count = int(step_count)
