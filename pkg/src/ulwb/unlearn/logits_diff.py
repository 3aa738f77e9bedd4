"""Inference-time unlearning: subtract a scaled assistant's logits from the target's."""

from __future__ import annotations

from ..lm_core.generate import greedy_generate
from ..lm_core.model import TinyLM


class IncompatibleTokenizerError(ValueError):
    """The assistant's vocabulary does not line up with the target's."""


class _PairCache:
    def __init__(self, a, b):
        self.target, self.assistant = a, b

    @property
    def length(self):
        return self.target.length


class LogitsDiffLM:
    """Composed LM whose logits are ``target - scale * assistant``.

    Exposes the :class:`TinyLM` call signature so decoding and scoring code
    treat it like a single model.
    """

    def __init__(self, target: TinyLM, assistant: TinyLM, scale: float):
        t, a = target.config, assistant.config
        if t.vocab_size != a.vocab_size or t.tokenizer != a.tokenizer:
            raise IncompatibleTokenizerError(
                f"assistant tokenizer {a.tokenizer!r} (vocab {a.vocab_size}) does not match "
                f"target tokenizer {t.tokenizer!r} (vocab {t.vocab_size}); logits cannot be subtracted")
        self.target = target
        self.assistant = assistant
        self.scale = float(scale)
        self.config = t if t.max_seq_len <= a.max_seq_len else a

    def new_cache(self):
        return _PairCache(self.target.new_cache(), self.assistant.new_cache())

    def __call__(self, tokens, positions=None, key_mask=None, cache=None):
        ct = cache.target if cache is not None else None
        ca = cache.assistant if cache is not None else None
        lt = self.target(tokens, positions=positions, key_mask=key_mask, cache=ct)
        la = self.assistant(tokens, positions=positions, key_mask=key_mask, cache=ca)
        return lt - self.scale * la

    def eval(self):
        self.target.eval()
        self.assistant.eval()
        return self


def logits_diff_decode(target: TinyLM, assistant: TinyLM, prompt, scale: float, max_new: int) -> list[int]:
    """Greedy (temperature-zero) decode over ``target - scale * assistant`` logits."""
    return greedy_generate(LogitsDiffLM(target, assistant, scale), prompt, max_new)
