"""Minibatch training loop shared by pretraining, memorization and unlearning."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import torch

from .model import TinyLM
from .ops import Batch, NonFiniteLossError, collate, token_nlls
from .optim import AdamWState, TrainConfig, step
from .tokenizer import Example

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when the training NLL blows past the model-destroyed threshold."""


def divergence_limit(vocab_size: int) -> float:
    return 2.0 * math.log(vocab_size) + 5.0


@dataclass
class EpochLog:
    epoch: int
    mean_nll: float
    mean_grad_norm: float
    steps: int

    def to_dict(self):
        return asdict(self)


Regularizer = Callable[[torch.Tensor, Batch], torch.Tensor]


def total_steps(n_examples: int, cfg: TrainConfig) -> int:
    return cfg.epochs * math.ceil(n_examples / cfg.batch_size)


def train(model: TinyLM, examples: Sequence[Example], cfg: TrainConfig, *, kind: str = "descent",
          grad_scale: float = 1.0, regularizer: Regularizer | None = None,
          guard: bool = True, on_epoch_end: Callable[[EpochLog, TinyLM], None] | None = None) -> list[EpochLog]:
    """Run ``cfg.epochs`` of AdamW on ``examples``; mutates ``model`` in place.

    ``kind="ascent"`` follows the negated NLL gradient. ``regularizer`` adds a
    differentiable term (computed from the same logits) to the signed objective.
    ``on_epoch_end(log, model)`` is called after every epoch.
    Returns one :class:`EpochLog` per epoch; the logged NLL is always the
    positive cross-entropy seen during that epoch, before each update.
    """
    if kind not in ("descent", "ascent"):
        raise ValueError(f"unknown kind {kind!r}")
    if not examples:
        raise ValueError("no training examples")
    n = len(examples)
    state = AdamWState(total_steps=total_steps(n, cfg))
    gen = torch.Generator().manual_seed(int(cfg.seed))
    names, params = zip(*model.named_parameters())
    limit = divergence_limit(model.config.vocab_size)
    sign = -1.0 if kind == "ascent" else 1.0
    history = []
    step_index = 0
    model.train()
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=gen).tolist()
        nll_sum, tok_sum, norm_sum, steps = 0.0, 0, 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = collate([examples[i] for i in order[start : start + cfg.batch_size]])
            logits = model(batch.tokens)
            mask = batch.loss_mask.clone()
            mask[:, 0] = False
            count = int(mask.sum())
            ce = token_nlls(logits, batch.tokens)[mask].sum() / count
            ce_value = float(ce.detach())
            if not math.isfinite(ce_value):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch} step {step_index}")
            if regularizer is None:
                grads = torch.autograd.grad(ce, params)
                if sign < 0:
                    grads = [-g for g in grads]
            else:
                objective = sign * ce + regularizer(logits, batch)
                grads = torch.autograd.grad(objective, params)
            norm = step(model, dict(zip(names, grads)), state, cfg, step_index, grad_scale)
            step_index += 1
            steps += 1
            nll_sum += ce_value * count
            tok_sum += count
            norm_sum += norm
        entry = EpochLog(epoch, nll_sum / tok_sum, norm_sum / steps, steps)
        history.append(entry)
        log.info("epoch %d (%s): nll=%.4f grad_norm=%.3f", epoch, kind, entry.mean_nll, entry.mean_grad_norm)
        if guard and entry.mean_nll > limit:
            raise DivergenceError(
                f"mean NLL {entry.mean_nll:.3f} exceeds divergence limit {limit:.3f} at epoch {epoch}")
        if on_epoch_end is not None:
            model.eval()
            on_epoch_end(entry, model)
    model.eval()
    return history
