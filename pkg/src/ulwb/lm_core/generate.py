"""Temperature-zero decoding with a KV cache.

Works with anything exposing the :class:`TinyLM` call signature plus
``new_cache()`` and ``config`` (e.g. a logits-difference composition).
"""

from __future__ import annotations

from typing import Sequence

import torch

from .model import SequenceTooLongError
from .tokenizer import EOS, PAD


class PromptTooLongError(SequenceTooLongError):
    pass


@torch.no_grad()
def greedy_generate_batch(lm, prompts: Sequence[Sequence[int]], max_new_tokens: int | Sequence[int],
                          stop_tokens=(EOS,)) -> list[list[int]]:
    """Greedy continuations for a batch of prompts (left-padded internally).

    ``max_new_tokens`` may be per-prompt. A row stops at the first stop token
    (which is kept) or when its budget or the context window is exhausted.
    Returns only the generated tokens.
    """
    n = len(prompts)
    if n == 0:
        return []
    budgets = [max_new_tokens] * n if isinstance(max_new_tokens, int) else list(max_new_tokens)
    max_len = lm.config.max_seq_len
    for p in prompts:
        if len(p) == 0:
            raise ValueError("empty prompt")
        if len(p) >= max_len:
            raise PromptTooLongError(f"prompt of {len(p)} tokens leaves no room (max_seq_len={max_len})")
    budgets = [min(b, max_len - len(p)) for b, p in zip(budgets, prompts)]
    outputs: list[list[int]] = [[] for _ in range(n)]
    if max(budgets) <= 0:
        return outputs

    width = max(len(p) for p in prompts)
    tokens = torch.full((n, width), PAD, dtype=torch.long)
    key_mask = torch.zeros((n, width), dtype=torch.bool)
    for i, p in enumerate(prompts):
        tokens[i, width - len(p):] = torch.tensor(list(p), dtype=torch.long)
        key_mask[i, width - len(p):] = True
    positions = (key_mask.long().cumsum(-1) - 1).clamp(min=0)
    next_pos = positions[:, -1] + 1

    cache = lm.new_cache()
    logits = lm(tokens, positions=positions, key_mask=key_mask, cache=cache)[:, -1, :]
    active = [b > 0 for b in budgets]
    stops = set(stop_tokens)
    for _ in range(max(budgets)):
        choice = logits.argmax(-1).tolist()
        for i in range(n):
            if active[i]:
                outputs[i].append(choice[i])
                if choice[i] in stops or len(outputs[i]) >= budgets[i]:
                    active[i] = False
        if not any(active):
            break
        step_tok = torch.tensor(choice, dtype=torch.long).unsqueeze(1)
        key_mask = torch.cat([key_mask, torch.ones((n, 1), dtype=torch.bool)], dim=1)
        # finished rows keep decoding into the cache; their positions are clamped
        pos = next_pos.clamp(max=max_len - 1).unsqueeze(1)
        logits = lm(step_tok, positions=pos, key_mask=key_mask, cache=cache)[:, -1, :]
        next_pos = next_pos + 1
    return outputs


def greedy_generate(lm, prompt: Sequence[int], max_new_tokens: int) -> list[int]:
    """Prompt followed by its greedy continuation (stops at EOS or the budget)."""
    prompt = list(prompt)
    if not prompt:
        raise ValueError("empty prompt")
    if len(prompt) >= lm.config.max_seq_len and max_new_tokens > 0:
        raise PromptTooLongError(f"prompt of {len(prompt)} tokens exceeds context")
    if len(prompt) > lm.config.max_seq_len:
        raise PromptTooLongError(f"prompt of {len(prompt)} tokens exceeds context")
    if max_new_tokens <= 0:
        return prompt
    return prompt + greedy_generate_batch(lm, [prompt], max_new_tokens)[0]
