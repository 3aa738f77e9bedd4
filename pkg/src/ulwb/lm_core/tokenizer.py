"""Byte-level tokenizer: ids 0-255 are raw bytes, 256-259 are specials."""

from __future__ import annotations

from dataclasses import dataclass, field

BOS = 256
EOS = 257
PAD = 258
SEP = 259
VOCAB_SIZE = 260
TOKENIZER_ID = "bytes260-v1"

SPECIALS = {"BOS": BOS, "EOS": EOS, "PAD": PAD, "SEP": SEP}


def _as_bytes(text: str | bytes) -> bytes:
    if isinstance(text, str):
        return text.encode("utf-8")
    return bytes(text)


def tokenize(text: str | bytes) -> list[int]:
    return list(_as_bytes(text))


def detokenize(tokens) -> bytes:
    """Inverse of :func:`tokenize`. Special ids are dropped."""
    return bytes(int(t) for t in tokens if 0 <= int(t) < 256)


def decode_text(tokens) -> str:
    return detokenize(tokens).decode("utf-8", errors="replace")


@dataclass
class Example:
    """A training/scoring sequence: ``tokens`` plus a per-token target mask.

    ``loss_mask[t]`` marks token ``t`` as a prediction target (scored from the
    logits at ``t - 1``), so ``loss_mask[0]`` is always False.
    """

    tokens: list[int]
    loss_mask: list[bool]
    truncated: bool = False
    key: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.tokens)


def encode_text(text: str | bytes, max_len: int, *, add_eos: bool = True, key: str = "") -> Example:
    """BOS + text (+ EOS), every non-BOS token scored. Truncates to ``max_len``."""
    body = tokenize(text)
    budget = max_len - 1 - (1 if add_eos else 0)
    truncated = len(body) > budget
    body = body[:budget]
    tokens = [BOS] + body + ([EOS] if add_eos else [])
    mask = [False] + [True] * (len(tokens) - 1)
    return Example(tokens, mask, truncated, key)


def encode_pair(prompt: str | bytes, completion: str | bytes, max_len: int, *,
                score_prompt: bool = True, add_eos: bool = True, key: str = "") -> Example:
    """BOS + prompt + completion (+ EOS).

    With ``score_prompt=False`` only the completion (and EOS) are targets.
    """
    p = tokenize(prompt)
    c = tokenize(completion)
    budget = max_len - 1 - (1 if add_eos else 0)
    truncated = len(p) + len(c) > budget
    if len(p) >= budget:
        p, c = p[:budget], []
    else:
        c = c[: budget - len(p)]
    tokens = [BOS] + p + c + ([EOS] if add_eos else [])
    mask = [False] + [score_prompt] * len(p) + [True] * (len(c) + (1 if add_eos else 0))
    return Example(tokens, mask, truncated, key)
