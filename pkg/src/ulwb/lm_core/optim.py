"""AdamW with decoupled weight decay, global-norm clipping and warmup schedules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 8
    scheduler: str = "linear"
    warmup_steps: int = 3
    grad_clip_max_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.scheduler not in ("linear", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not self.grad_clip_max_norm > 0:
            raise ValueError("grad_clip_max_norm must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_factor(step: int, total_steps: int, warmup_steps: int, scheduler: str = "linear") -> float:
    """Multiplier on the base lr for optimizer step ``step`` (0-based).

    Linear warmup from 0 over ``warmup_steps``, then linear or cosine decay that
    reaches 0 at ``step == total_steps``.
    """
    if step < warmup_steps:
        return step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    if scheduler == "linear":
        return max(0.0, 1.0 - progress)
    if scheduler == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * progress))
    raise ValueError(f"unknown scheduler {scheduler!r}")


def global_norm(grads: dict[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float(g.double().pow(2).sum()) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, torch.Tensor], max_norm: float) -> tuple[dict[str, torch.Tensor], float]:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamWState:
    total_steps: int
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)
    steps_taken: int = 0


def step(model, grads: dict[str, torch.Tensor], state: AdamWState, cfg: TrainConfig,
         step_index: int, grad_scale: float = 1.0) -> float:
    """One AdamW update in place; returns the pre-clip gradient norm.

    Order: clip to ``cfg.grad_clip_max_norm``, multiply by ``grad_scale``,
    decay weights by ``lr_t * wd * p``, then the moment update.
    """
    if step_index < 0:
        raise ValueError("step_index must be >= 0")
    params = dict(model.named_parameters())
    if grads.keys() != params.keys():
        raise ValueError("gradient names do not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"shape mismatch for {name}: {tuple(g.shape)} vs {tuple(params[name].shape)}")

    grads, norm = clip_by_global_norm(grads, cfg.grad_clip_max_norm)
    lr = cfg.lr * lr_factor(step_index, state.total_steps, cfg.warmup_steps, cfg.scheduler)
    t = state.steps_taken + 1
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name] * grad_scale
            if name not in state.exp_avg:
                state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
            m, v = state.exp_avg[name], state.exp_avg_sq[name]
            m.mul_(BETA1).add_(g, alpha=1 - BETA1)
            v.mul_(BETA2).addcmul_(g, g, value=1 - BETA2)
            if lr == 0.0:
                continue
            if cfg.weight_decay:
                p.sub_(p * (lr * cfg.weight_decay))
            denom = (v / bc2).sqrt_().add_(EPS)
            p.sub_((m / bc1) / denom * lr)
    state.steps_taken = t
    return norm
