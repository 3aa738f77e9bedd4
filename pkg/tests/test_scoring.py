import math

import numpy as np
import pytest
import torch

from ulwb.datagen import ProbeQuestion, Record
from ulwb.eval import (
    SCORE_KEYS,
    MiaResult,
    MissingGroupError,
    ScoreReport,
    combine,
    document_nlls,
    format_table,
    full_report,
    knowledge_scores,
    mia_evaluate,
    option_nlls,
    regurgitation_scores,
    utility_accuracy,
)
from ulwb.eval.scoring import COLUMNS
from ulwb.lm_core import TrainConfig, encode_pair, train


def test_twelve_score_keys():
    assert len(SCORE_KEYS) == 12
    assert len(set(SCORE_KEYS)) == 12


def test_full_report_structure(tiny_model, small_dataset):
    c = small_dataset.corpus
    audit = []
    rep = full_report(tiny_model, c.forget_train, c.retain_train, small_dataset.members,
                      small_dataset.nonmembers, small_dataset.probe, audit=audit)
    assert set(rep.scores) == set(SCORE_KEYS)
    assert all(0 <= v <= 1 for v in rep.scores.values())
    # an untrained model regurgitates nothing, so the inverted forget scores are high
    assert rep.mean_raw("forget", "regurgitation") < 0.2
    assert rep.final_aggregate == pytest.approx((rep.task_aggregate + rep.mia_score + rep.utility_accuracy) / 3)
    assert len(audit) == len(c.forget_train) + len(c.retain_train)
    back = ScoreReport.from_dict(rep.to_dict())
    assert back.to_dict() == rep.to_dict()


def test_missing_group_raises(tiny_model, small_dataset):
    c = small_dataset.corpus
    no_task1 = [r for r in c.forget_train if r.task != 1]
    with pytest.raises(MissingGroupError):
        full_report(tiny_model, no_task1, c.retain_train, small_dataset.members,
                    small_dataset.nonmembers, small_dataset.probe)
    scores = {k: 0.5 for k in SCORE_KEYS[:-1]}
    with pytest.raises(MissingGroupError):
        combine(scores, MiaResult([], [], 0.5, 1.0), 0.5)


def test_memorized_record_scores_one(tiny_model):
    rec = Record("aa_sc", "The lighthouse keeper", "counted seven gulls", 1, "forget")
    qa = Record("aa_qa", "How many gulls?", "seven", 1, "forget")
    data = [encode_pair(r.input, " " + r.output, 64) for r in (rec, qa)]
    train(tiny_model, data, TrainConfig(lr=1e-2, epochs=80, batch_size=2, warmup_steps=0))
    assert regurgitation_scores(tiny_model, [rec]) == [1.0]
    assert knowledge_scores(tiny_model, [qa]) == [1]


def test_style_checks(tiny_model):
    with pytest.raises(ValueError):
        regurgitation_scores(tiny_model, [Record("a_qa", "q", "a", 1, "forget")])
    with pytest.raises(ValueError):
        knowledge_scores(tiny_model, [Record("a_sc", "q", "a", 1, "forget")])


def test_mia_separates_trained_documents(tiny_model):
    from ulwb.datagen import MiaMember, MiaNonMember
    from ulwb.lm_core import encode_text

    docs = [f"member document number {i} about apples" for i in range(4)]
    others = [f"unrelated text {i} on quantum ferries" for i in range(4)]
    before = mia_evaluate(tiny_model, [MiaMember(str(i), d, {}, {}) for i, d in enumerate(docs)],
                          [MiaNonMember({}, d) for d in others])
    train(tiny_model, [encode_text(d, 64) for d in docs], TrainConfig(lr=1e-2, epochs=40, batch_size=4))
    after = mia_evaluate(tiny_model, [MiaMember(str(i), d, {}, {}) for i, d in enumerate(docs)],
                         [MiaNonMember({}, d) for d in others])
    assert after.mia_auc == 1.0 and after.mia_score == 0.0
    assert len(before.member_nlls) == 4


def test_document_nll_of_uniform_model(tiny_model):
    with torch.no_grad():
        tiny_model.lm_head.weight.zero_()
    assert document_nlls(tiny_model, ["abc"]) == [pytest.approx(math.log(260), abs=1e-5)]


def test_utility_prefers_lowest_option_nll(tiny_model):
    q = ProbeQuestion("The capital of Zorvia is", ("Alpha", "Beta", "Gamma", "Delta"), 2, "capital")
    train(tiny_model, [encode_pair(q.question, " Gamma", 64, add_eos=False)],
          TrainConfig(lr=1e-2, epochs=40, batch_size=1, warmup_steps=0))
    nlls = option_nlls(tiny_model, [q])
    assert nlls.shape == (1, 4)
    assert int(np.argmin(nlls[0])) == 2
    assert utility_accuracy(tiny_model, [q]) == 1.0


def _report(agg):
    return combine({k: agg for k in SCORE_KEYS}, MiaResult([1.0], [2.0], 1.0, 0.0), 0.5)


def test_format_table_layout():
    text = format_table([_report(0.5).row("original"), _report(0.25).row("GA")])
    lines = text.splitlines()
    assert lines[0].split() == ["Method", "Aggregate", "Task", "Agg.", "MIA", "score", "Utility"]
    assert len(lines) == 4
    assert lines[2].startswith("original")
    assert list(_report(0.5).row("x")) == list(COLUMNS)


def test_utility_gate_flag():
    rep = _report(0.5)
    assert rep.utility_pass  # 0.5 >= default 0.45
    rep.utility_threshold = 0.6
    assert not rep.utility_pass
