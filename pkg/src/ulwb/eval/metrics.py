"""Scalar metrics: ROUGE-L, exact match, harmonic mean, pairwise AUC, MIA score."""

from __future__ import annotations

from typing import Sequence

import numpy as np


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    """LCS F1 between two token lists. Both empty scores 1, one empty scores 0."""
    if not candidate and not reference:
        return 1.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


def rouge_l_text(candidate: str, reference: str) -> float:
    return rouge_l(candidate.split(), reference.split())


def normalize_answer(s: str) -> str:
    return " ".join(s.split()).casefold()


def exact_match(prediction: str, gold: str) -> int:
    return int(normalize_answer(prediction) == normalize_answer(gold))


def harmonic_mean(scores: Sequence[float]) -> float:
    """Harmonic mean; 0 if any score is 0."""
    if not scores:
        raise ValueError("no scores")
    for s in scores:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score {s} outside [0, 1]")
    if any(s == 0 for s in scores):
        return 0.0
    return len(scores) / sum(1.0 / s for s in scores)


def task_aggregate(scores: Sequence[float]) -> float:
    if len(scores) != 12:
        raise ValueError(f"task aggregate needs 12 scores, got {len(scores)}")
    return harmonic_mean(scores)


def invert(score: float) -> float:
    return 1.0 - score


def pairwise_auc(positive: Sequence[float], negative: Sequence[float]) -> float:
    """P(positive score > negative score), ties counting one half.

    Computed from average ranks (Mann-Whitney U), O(n log n).
    """
    if len(positive) == 0 or len(negative) == 0:
        raise ValueError("AUC needs non-empty positive and negative sets")
    pos = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(negative, dtype=np.float64)
    allv = np.concatenate([pos, neg])
    _, inverse, counts = np.unique(allv, return_inverse=True, return_counts=True)
    # average 1-based rank of each distinct value
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    rank_sum = avg_rank[inverse[: len(pos)]].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def mia_score(auc: float) -> float:
    """1 at chance-level separation, 0 when members are perfectly separable."""
    return 1.0 - abs(auc - 0.5) * 2.0
