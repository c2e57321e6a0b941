"""Training state, Adam with bias correction, and the warm-up / inverse-sqrt schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

BETA1, BETA2, ADAM_EPS = 0.9, 0.98, 1e-9


@dataclass
class DataCursor:
    """Position in the shuffled batch stream, so training resumes exactly."""

    seed: int
    ids_digest: str = ""
    epoch: int = 0
    index: int = 0


@dataclass
class TrainState:
    params: dict[str, torch.Tensor]
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0
    # global step at which the current LR warm-up began
    lr_origin: int = 0
    peak_lr: float = 5e-4
    warmup_steps: int = 16000
    dropout_rng: torch.Generator = field(default_factory=torch.Generator)
    data: DataCursor = field(default_factory=lambda: DataCursor(seed=0))

    @classmethod
    def fresh(cls, params: dict[str, torch.Tensor], *, peak_lr: float, warmup_steps: int,
              seed: int) -> TrainState:
        gen = torch.Generator()
        gen.manual_seed(seed)
        return cls(
            params=params,
            m={k: torch.zeros_like(p) for k, p in params.items()},
            v={k: torch.zeros_like(p) for k, p in params.items()},
            peak_lr=peak_lr,
            warmup_steps=warmup_steps,
            dropout_rng=gen,
            data=DataCursor(seed=seed),
        )

    def current_lr(self) -> float:
        """Learning rate for the next optimizer step."""
        return lr_schedule(self.step - self.lr_origin + 1, self.warmup_steps, self.peak_lr)

    def restart_warmup(self) -> None:
        self.lr_origin = self.step


def lr_schedule(t: int, warmup: int, peak: float) -> float:
    """Linear warm-up to ``peak`` over ``warmup`` steps, then peak * sqrt(warmup / t)."""
    if t < 1:
        raise ValueError("lr_schedule is defined for t >= 1")
    return peak * min(t / warmup, math.sqrt(warmup / t))


def adam_step(state: TrainState, grads: dict[str, torch.Tensor], lr: float) -> TrainState:
    """One Adam update (beta1=0.9, beta2=0.98, eps=1e-9); mutates and returns ``state``."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            bad = int((~torch.isfinite(g)).sum())
            raise FloatingPointError(
                f"non-finite gradient for {name}: {bad} entries at step {state.step + 1}")
    state.step += 1
    c1 = 1.0 - BETA1 ** state.step
    c2 = 1.0 - BETA2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m.mul_(BETA1).add_(g, alpha=1.0 - BETA1)
        v.mul_(BETA2).addcmul_(g, g, value=1.0 - BETA2)
        state.params[name].sub_(lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))
    return state
