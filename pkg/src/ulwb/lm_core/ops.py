"""Functional entry points over a :class:`TinyLM`: logits, NLL and gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .model import SequenceTooLongError, TinyLM
from .tokenizer import PAD, Example


class EmptyMaskError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class Batch:
    tokens: torch.Tensor      # [B, T] long, right-padded with PAD
    loss_mask: torch.Tensor   # [B, T] bool, True where the token is a target

    def __len__(self):
        return self.tokens.shape[0]


def collate(examples: Sequence[Example]) -> Batch:
    width = max(len(e.tokens) for e in examples)
    tokens = torch.full((len(examples), width), PAD, dtype=torch.long)
    mask = torch.zeros((len(examples), width), dtype=torch.bool)
    for i, e in enumerate(examples):
        tokens[i, : len(e.tokens)] = torch.tensor(e.tokens, dtype=torch.long)
        mask[i, : len(e.loss_mask)] = torch.tensor(e.loss_mask, dtype=torch.bool)
    return Batch(tokens, mask)


def _as_tensor(tokens) -> torch.Tensor:
    if isinstance(tokens, torch.Tensor):
        return tokens.long()
    return torch.tensor(list(tokens), dtype=torch.long)


def forward(model: TinyLM, tokens) -> torch.Tensor:
    """Logits ``[T, V]`` for a single non-empty token sequence."""
    t = _as_tensor(tokens)
    if t.numel() == 0:
        raise ValueError("empty token sequence")
    if t.numel() > model.config.max_seq_len:
        raise SequenceTooLongError(f"{t.numel()} tokens > max_seq_len={model.config.max_seq_len}")
    return model(t.unsqueeze(0))[0]


def token_nlls(logits: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """``-log p(tokens[..., t] | tokens[..., <t])`` aligned to target position.

    Returns ``[..., T]`` with position 0 set to zero (nothing predicts it).
    """
    logp = F.log_softmax(logits[..., :-1, :], dim=-1)
    picked = logp.gather(-1, tokens[..., 1:].unsqueeze(-1)).squeeze(-1)
    pad = torch.zeros_like(picked[..., :1])
    return torch.cat([pad, -picked], dim=-1)


def nll(model: TinyLM, tokens, loss_mask) -> tuple[torch.Tensor, float]:
    """Per-token NLL over masked-in targets and their mean."""
    t = _as_tensor(tokens)
    m = torch.as_tensor(list(loss_mask) if not isinstance(loss_mask, torch.Tensor) else loss_mask,
                        dtype=torch.bool)
    if not bool(m[1:].any()):
        raise EmptyMaskError("loss mask selects no target positions")
    with torch.no_grad():
        per = token_nlls(forward(model, t), t)[m]
    return per, float(per.mean())


def batch_loss(model: TinyLM, batch: Batch) -> tuple[torch.Tensor, int]:
    """Token-mean NLL over the batch's targets (differentiable) and target count."""
    logits = model(batch.tokens)
    per = token_nlls(logits, batch.tokens)
    mask = batch.loss_mask.clone()
    mask[:, 0] = False
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("batch has no target positions")
    return per[mask].sum() / count, count


def backward(model: TinyLM, batch: Batch, loss_kind: str = "descent") -> dict[str, torch.Tensor]:
    """Gradients of the mean batch NLL; ``ascent`` returns them negated."""
    if loss_kind not in ("descent", "ascent"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    loss, _ = batch_loss(model, batch)
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss is {float(loss)}")
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params)
    if loss_kind == "ascent":
        grads = [-g for g in grads]
    return dict(zip(names, grads))


@torch.no_grad()
def sequence_mean_nlls(model, examples: Sequence[Example], batch_size: int = 16) -> list[float]:
    """Mean target NLL for each example (batched, order-preserving)."""
    out = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i : i + batch_size]
        batch = collate(chunk)
        per = token_nlls(model(batch.tokens), batch.tokens)
        mask = batch.loss_mask.clone()
        mask[:, 0] = False
        sums = (per * mask).sum(-1)
        counts = mask.sum(-1)
        if bool((counts == 0).any()):
            raise EmptyMaskError("example with no target positions")
        out.extend((sums / counts).tolist())
    return out
