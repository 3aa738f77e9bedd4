"""Model-based scores and the combined report.

Every function takes ``lm``: a :class:`~ulwb.lm_core.TinyLM` or anything with the
same call signature (e.g. a logits-difference composition).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..datagen.records import MiaMember, MiaNonMember, ProbeQuestion, Record, TASKS
from ..lm_core.generate import greedy_generate_batch
from ..lm_core.ops import sequence_mean_nlls
from ..lm_core.tokenizer import BOS, EOS, decode_text, encode_pair, encode_text, tokenize
from .metrics import exact_match, invert, mia_score, pairwise_auc, rouge_l_text, task_aggregate

GEN_SLACK = 16
DEFAULT_UTILITY_THRESHOLD = 0.45
GEN_BATCH = 32


class MissingGroupError(ValueError):
    pass


@dataclass
class GenerationRecord:
    record_id: str
    prompt: str
    reference: str
    hypothesis: str
    reference_nll: float

    def to_dict(self):
        return asdict(self)


@dataclass
class MiaResult:
    member_nlls: list[float]
    nonmember_nlls: list[float]
    mia_auc: float
    mia_score: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _generate(lm, records: Sequence[Record], newline_stops: bool) -> list[str]:
    """Greedy continuation text for each record's input, in input order."""
    max_len = lm.config.max_seq_len
    prompts = [[BOS] + tokenize(r.input)[: max_len - 2] for r in records]
    budgets = [len(tokenize(" " + r.output)) + GEN_SLACK for r in records]
    order = sorted(range(len(records)), key=lambda i: (len(prompts[i]), records[i].id))
    outs: list[list[int]] = [[] for _ in records]
    stops = (EOS, ord("\n")) if newline_stops else (EOS,)
    for start in range(0, len(order), GEN_BATCH):
        idx = order[start : start + GEN_BATCH]
        gen = greedy_generate_batch(lm, [prompts[i] for i in idx], [budgets[i] for i in idx], stops)
        for i, g in zip(idx, gen):
            outs[i] = g
    texts = []
    for g in outs:
        text = decode_text(g[: g.index(EOS)] if EOS in g else g)
        if newline_stops:
            text = text.split("\n", 1)[0]
        texts.append(text.strip())
    return texts


def _reference_nlls(lm, records: Sequence[Record]) -> list[float]:
    max_len = lm.config.max_seq_len
    ex = [encode_pair(r.input, " " + r.output, max_len, score_prompt=False) for r in records]
    return sequence_mean_nlls(lm, ex)


def regurgitation_scores(lm, sc_records: Sequence[Record], audit: list | None = None) -> list[float]:
    """Per-record ROUGE-L of the greedy continuation against the reference output."""
    if not sc_records:
        raise ValueError("no sentence-completion records")
    if any(r.style != "sc" for r in sc_records):
        raise ValueError("regurgitation scoring needs sc-styled records")
    hyps = _generate(lm, sc_records, newline_stops=False)
    if audit is not None:
        nlls = _reference_nlls(lm, sc_records)
        audit.extend(GenerationRecord(r.id, r.input, r.output, h, n) for r, h, n in zip(sc_records, hyps, nlls))
    return [rouge_l_text(h, r.output) for h, r in zip(hyps, sc_records)]


def regurgitation_score(lm, sc_records: Sequence[Record], audit: list | None = None) -> float:
    return float(np.mean(regurgitation_scores(lm, sc_records, audit)))


def knowledge_scores(lm, qa_records: Sequence[Record], audit: list | None = None) -> list[int]:
    if not qa_records:
        raise ValueError("no question-answer records")
    if any(r.style != "qa" for r in qa_records):
        raise ValueError("knowledge scoring needs qa-styled records")
    preds = _generate(lm, qa_records, newline_stops=True)
    if audit is not None:
        nlls = _reference_nlls(lm, qa_records)
        audit.extend(GenerationRecord(r.id, r.input, r.output, p, n) for r, p, n in zip(qa_records, preds, nlls))
    return [exact_match(p, r.output) for p, r in zip(preds, qa_records)]


def knowledge_score(lm, qa_records: Sequence[Record], audit: list | None = None) -> float:
    return float(np.mean(knowledge_scores(lm, qa_records, audit)))


def document_nlls(lm, documents: Sequence[str]) -> list[float]:
    max_len = lm.config.max_seq_len
    return sequence_mean_nlls(lm, [encode_text(d, max_len, add_eos=False) for d in documents])


def mia_evaluate(lm, members: Sequence[MiaMember], nonmembers: Sequence[MiaNonMember]) -> MiaResult:
    """AUC of ``-NLL`` as a membership score, folded into the MIA score."""
    if not members or not nonmembers:
        raise ValueError("MIA needs non-empty member and non-member sets")
    m = document_nlls(lm, [x.document for x in members])
    n = document_nlls(lm, [x.document for x in nonmembers])
    auc = pairwise_auc([-v for v in m], [-v for v in n])
    return MiaResult(m, n, auc, mia_score(auc))


def option_nlls(lm, probe: Sequence[ProbeQuestion]) -> np.ndarray:
    """``[n_questions, 4]`` mean per-token NLL of each option after its question."""
    max_len = lm.config.max_seq_len
    ex = [encode_pair(q.question, " " + opt, max_len, score_prompt=False, add_eos=False)
          for q in probe for opt in q.options]
    return np.array(sequence_mean_nlls(lm, ex, batch_size=32)).reshape(len(probe), 4)


def utility_accuracy(lm, probe: Sequence[ProbeQuestion]) -> float:
    if not probe:
        raise ValueError("empty probe")
    choice = option_nlls(lm, probe).argmin(axis=1)
    return float(np.mean([int(c == q.answer_index) for c, q in zip(choice, probe)]))


SCORE_KEYS = tuple(
    f"{split}/task{task}/{kind}"
    for split in ("forget", "retain")
    for task in TASKS
    for kind in ("regurgitation", "knowledge")
)


@dataclass
class ScoreReport:
    """``scores`` holds the 12 group scores; forget-side entries are already inverted."""

    scores: dict[str, float]
    task_aggregate: float
    mia: MiaResult
    utility_accuracy: float
    final_aggregate: float
    utility_threshold: float = DEFAULT_UTILITY_THRESHOLD
    extras: dict = field(default_factory=dict)

    @property
    def mia_score(self) -> float:
        return self.mia.mia_score

    @property
    def utility_pass(self) -> bool:
        return self.utility_accuracy >= self.utility_threshold

    def raw(self, key: str) -> float:
        """Un-inverted score for ``key``."""
        v = self.scores[key]
        return invert(v) if key.startswith("forget/") else v

    def mean_raw(self, split: str, kind: str) -> float:
        return float(np.mean([self.raw(f"{split}/task{t}/{kind}") for t in TASKS]))

    def to_dict(self) -> dict:
        return {
            "scores": dict(self.scores),
            "task_aggregate": self.task_aggregate,
            "mia": self.mia.to_dict(),
            "utility_accuracy": self.utility_accuracy,
            "utility_threshold": self.utility_threshold,
            "utility_pass": self.utility_pass,
            "final_aggregate": self.final_aggregate,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreReport":
        return cls(dict(d["scores"]), d["task_aggregate"], MiaResult.from_dict(d["mia"]),
                   d["utility_accuracy"], d["final_aggregate"],
                   d.get("utility_threshold", DEFAULT_UTILITY_THRESHOLD), d.get("extras", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self, method: str) -> dict:
        return {"Method": method, "Aggregate": self.final_aggregate, "Task Agg.": self.task_aggregate,
                "MIA score": self.mia_score, "Utility": self.utility_accuracy}


def final_aggregate(task_agg: float, mia: float, utility: float) -> float:
    return (task_agg + mia + utility) / 3.0


def combine(scores: dict[str, float], mia: MiaResult, utility: float,
            threshold: float = DEFAULT_UTILITY_THRESHOLD, extras: dict | None = None) -> ScoreReport:
    """Assemble a report from the 12 (forget-inverted) scores and the two other components."""
    missing = [k for k in SCORE_KEYS if k not in scores]
    if missing:
        raise MissingGroupError(f"missing score groups: {missing}")
    agg = task_aggregate([scores[k] for k in SCORE_KEYS])
    return ScoreReport(dict(scores), agg, mia, utility, final_aggregate(agg, mia.mia_score, utility),
                       threshold, extras or {})


def full_report(lm, forget: Sequence[Record], retain: Sequence[Record], members, nonmembers, probe,
                threshold: float = DEFAULT_UTILITY_THRESHOLD, audit: list | None = None) -> ScoreReport:
    groups: dict[tuple[str, int, str], list[Record]] = {}
    for r in list(forget) + list(retain):
        groups.setdefault((r.split, r.task, r.style), []).append(r)
    for split in ("forget", "retain"):
        for task in TASKS:
            for style in ("sc", "qa"):
                if not groups.get((split, task, style)):
                    raise MissingGroupError(f"no {style} records for {split} task {task}")

    sc = [r for r in list(forget) + list(retain) if r.style == "sc"]
    qa = [r for r in list(forget) + list(retain) if r.style == "qa"]
    per_record = dict(zip((r.id for r in sc), regurgitation_scores(lm, sc, audit)))
    per_record.update(zip((r.id for r in qa), knowledge_scores(lm, qa, audit)))

    scores = {}
    for split in ("forget", "retain"):
        for task in TASKS:
            for style, kind in (("sc", "regurgitation"), ("qa", "knowledge")):
                raw = float(np.mean([per_record[r.id] for r in groups[(split, task, style)]]))
                scores[f"{split}/task{task}/{kind}"] = invert(raw) if split == "forget" else raw
    mia = mia_evaluate(lm, members, nonmembers)
    utility = utility_accuracy(lm, probe)
    return combine(scores, mia, utility, threshold)


COLUMNS = ("Method", "Aggregate", "Task Agg.", "MIA score", "Utility")


def format_table(rows: Sequence[dict]) -> str:
    """Aligned plain-text table in the Method/Aggregate/Task Agg./MIA/Utility layout."""
    cells = [list(COLUMNS)]
    for r in rows:
        cells.append([str(r["Method"])] + [f"{r[c]:.4f}" for c in COLUMNS[1:]])
    widths = [max(len(row[i]) for row in cells) for i in range(len(COLUMNS))]
    lines = []
    for j, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
