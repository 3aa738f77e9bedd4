import math

import pytest
import torch

from ulwb.datagen import Record
from ulwb.eval import regurgitation_score
from ulwb.lm_core import (
    LAYER_COMPONENTS,
    BOS,
    ModelConfig,
    TrainConfig,
    clone_model,
    greedy_generate,
    layer_component_params,
    params_equal,
    sequence_mean_nlls,
    tokenize,
    train,
    xavier_init,
)
from ulwb.unlearn import (
    DEFAULT_RATIOS,
    IncompatibleTokenizerError,
    LogitsDiffLM,
    MethodSpec,
    PerturbSpec,
    UnknownComponentError,
    apply_layer_perturbation,
    apply_xavier_reinit,
    as_examples,
    freeze_boundary,
    kl_to_reference,
    logits_diff_decode,
    run_controlled_ga,
    run_gradient_ascent,
    run_gradient_descent,
    run_gradient_difference,
    run_kl_minimization,
)

FORGET = [
    Record("f1_sc", "Mira keeps bees", "behind the old mill", 1, "forget"),
    Record("f2_sc", "Tobin sails to", "the amber islands", 1, "forget"),
    Record("f3_sc", "Call Ysolde at", "415-555-0199", 2, "forget"),
    Record("f4_sc", "The council met", "under the elm tree", 3, "forget"),
]
RETAIN = [
    Record("r1_sc", "Dara paints the", "blue harbour walls", 1, "retain"),
    Record("r2_sc", "Ovin grows pears", "near the river bend", 1, "retain"),
    Record("r3_sc", "Reach Hale at", "212-555-0147", 2, "retain"),
    Record("r4_sc", "The market opens", "before the first bell", 3, "retain"),
]
CFG = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, max_seq_len=64, seed=0)


def ga_cfg(**kw):
    return TrainConfig(**{"lr": 1e-3, "epochs": 2, "batch_size": 2, "seed": 3, **kw})


@pytest.fixture(scope="module")
def memorized():
    m = xavier_init(CFG, 0)
    train(m, as_examples(FORGET + RETAIN, 64), TrainConfig(lr=1e-2, epochs=80, batch_size=4, warmup_steps=0))
    return m


def forget_nll(m):
    return sum(sequence_mean_nlls(m, as_examples(FORGET, 64))) / len(FORGET)


def test_fixture_memorized(memorized):
    assert regurgitation_score(memorized, FORGET) == 1.0
    assert regurgitation_score(memorized, RETAIN) == 1.0


def test_inputs_are_not_mutated(memorized):
    before = clone_model(memorized)
    run_gradient_ascent(memorized, FORGET, ga_cfg())
    assert params_equal(before, memorized)


def test_ga_raises_forget_nll(memorized):
    out, trace = run_gradient_ascent(memorized, FORGET, ga_cfg(lr=1e-4, epochs=1))
    assert forget_nll(out) > forget_nll(memorized)
    assert len(trace) == 1


def test_controlled_ga_alpha_one_is_ga(memorized):
    a, ta = run_gradient_ascent(memorized, FORGET, ga_cfg())
    b, tb = run_controlled_ga(memorized, FORGET, ga_cfg(), alpha=1.0)
    assert params_equal(a, b)
    assert [e.to_dict() for e in ta] == [e.to_dict() for e in tb]


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_controlled_ga_alpha_range(memorized, alpha):
    with pytest.raises(ValueError):
        run_controlled_ga(memorized, FORGET, ga_cfg(), alpha)
    with pytest.raises(ValueError):
        MethodSpec("ControlledGA", train=ga_cfg(), alpha=alpha)


def test_controlled_ga_small_alpha_moves_less(memorized):
    full, _ = run_gradient_ascent(memorized, FORGET, ga_cfg(epochs=1))
    ctl, _ = run_controlled_ga(memorized, FORGET, ga_cfg(epochs=1), 0.1)
    assert forget_nll(memorized) < forget_nll(ctl) < forget_nll(full)


def test_klmin_zero_weight_is_ga(memorized):
    a, ta = run_gradient_ascent(memorized, FORGET, ga_cfg())
    b, tb = run_kl_minimization(memorized, memorized, FORGET, ga_cfg(), kl_weight=0.0)
    assert params_equal(a, b)
    assert [e.mean_nll for e in ta] == [e.mean_nll for e in tb]


def test_kl_of_identical_distributions_is_zero():
    logits = torch.randn(2, 5, 260)
    mask = torch.ones(2, 5, dtype=torch.bool)
    assert float(kl_to_reference(logits, logits.clone(), mask)) == pytest.approx(0.0, abs=1e-6)
    assert float(kl_to_reference(logits, torch.zeros_like(logits), mask)) > 0


def _mean_kl(model, reference):
    batch_tokens = [ex.tokens for ex in as_examples(FORGET, 64)]
    tot = 0.0
    for toks in batch_tokens:
        t = torch.tensor([toks])
        mask = torch.ones_like(t, dtype=torch.bool)
        with torch.no_grad():
            tot += float(kl_to_reference(model(t), reference(t), mask))
    return tot / len(batch_tokens)


def test_klmin_large_weight_stays_closer_to_reference(memorized):
    ga, _ = run_gradient_ascent(memorized, FORGET, ga_cfg(epochs=1))
    kl, _ = run_kl_minimization(memorized, memorized, FORGET, ga_cfg(epochs=1), kl_weight=1e6)
    assert _mean_kl(kl, memorized) < _mean_kl(ga, memorized)


def test_klmin_negative_weight_rejected(memorized):
    with pytest.raises(ValueError):
        run_kl_minimization(memorized, memorized, FORGET, ga_cfg(), -1.0)


def test_gdiff_is_composition(memorized):
    gd = ga_cfg(seed=9, lr=5e-3)
    composed, _ = run_gradient_difference(memorized, FORGET, RETAIN, ga_cfg(), gd)
    mid, _ = run_gradient_ascent(memorized, FORGET, ga_cfg())
    manual, _ = run_gradient_descent(mid, RETAIN, gd)
    assert params_equal(composed, manual)


def test_gd_none_is_identity(memorized):
    out, trace = run_gradient_descent(memorized, RETAIN, None)
    assert params_equal(out, memorized) and out is not memorized and trace == []


def test_gd_lowers_retain_nll_over_epochs():
    m = xavier_init(CFG, 1)
    _, trace = run_gradient_descent(m, RETAIN, TrainConfig(lr=3e-3, epochs=6, batch_size=2))
    nlls = [e.mean_nll for e in trace]
    assert all(b <= a * 1.05 for a, b in zip(nlls, nlls[1:]))


def test_gd_restores_after_destructive_ga(memorized):
    ga, _ = run_gradient_ascent(memorized, FORGET, ga_cfg(lr=3e-3, epochs=3))
    before_gd = regurgitation_score(ga, RETAIN)
    fixed, _ = run_gradient_descent(ga, RETAIN, TrainConfig(lr=5e-3, epochs=20, batch_size=4))
    assert regurgitation_score(fixed, RETAIN) >= before_gd
    assert regurgitation_score(fixed, RETAIN) == 1.0


def test_empty_data_rejected(memorized):
    with pytest.raises(ValueError):
        run_gradient_ascent(memorized, [], ga_cfg())
    with pytest.raises(ValueError):
        run_gradient_difference(memorized, FORGET, [], ga_cfg(), ga_cfg())


def test_xavier_reinit_destroys_memorization(memorized):
    fresh = apply_xavier_reinit(memorized, seed=123)
    assert regurgitation_score(fresh, FORGET) < 0.2
    for name, p in fresh.named_parameters():
        if p.dim() == 2:
            assert p.abs().max() <= math.sqrt(6 / sum(p.shape)) + 1e-7


def test_perturb_zero_ratios_identity(memorized):
    out = apply_layer_perturbation(memorized, PerturbSpec(ratios={k: 0.0 for k in LAYER_COMPONENTS}))
    assert params_equal(out, memorized)


def test_perturb_default_ratios_and_frozen_layers():
    cfg = ModelConfig(n_layers=8, d_model=64, n_heads=4, d_ff=256, max_seq_len=16)
    m = xavier_init(cfg, 0)
    out = apply_layer_perturbation(m, PerturbSpec(seed=4))
    boundary = freeze_boundary(8, 0.75)
    assert boundary == 6
    for layer in range(8):
        a, b = layer_component_params(m, layer), layer_component_params(out, layer)
        for name in LAYER_COMPONENTS:
            same = torch.equal(a[name], b[name])
            if layer < boundary or DEFAULT_RATIOS[name] == 0:
                assert same, (layer, name)
            else:
                assert not same, (layer, name)
    # noise magnitude: 0.07 * E|N(0,1)| = 0.07 * sqrt(2/pi)
    delta = (layer_component_params(out, 7)["mlp.down_proj"] - layer_component_params(m, 7)["mlp.down_proj"]).abs()
    expected = 0.07 * math.sqrt(2 / math.pi)
    assert expected == pytest.approx(0.0559, abs=1e-4)
    assert float(delta.detach().mean()) == pytest.approx(expected, rel=0.10)
    # non-layer tensors untouched
    assert torch.equal(m.lm_head.weight, out.lm_head.weight)


def test_perturb_unknown_component():
    with pytest.raises(UnknownComponentError):
        PerturbSpec(ratios={"mlp.fc1": 0.1})


def test_perturb_spec_validation():
    with pytest.raises(ValueError):
        PerturbSpec(freeze_fraction=1.5)
    with pytest.raises(ValueError):
        PerturbSpec(ratios={"mlp.down_proj": -1.0})


def test_perturb_deterministic(memorized):
    a = apply_layer_perturbation(memorized, PerturbSpec(freeze_fraction=0.0, seed=1))
    b = apply_layer_perturbation(memorized, PerturbSpec(freeze_fraction=0.0, seed=1))
    assert params_equal(a, b)


def _prompt(r):
    return [BOS] + tokenize(r.input)


def test_logits_diff_scale_zero_is_target(memorized):
    other = xavier_init(CFG, 5)
    for r in FORGET + RETAIN:
        p = _prompt(r)
        assert logits_diff_decode(memorized, other, p, 0.0, 20) == greedy_generate(memorized, p, 20)


@pytest.mark.parametrize("scale", [0.2, 0.5, 0.9])
def test_logits_diff_self_assistant_preserves_argmax(memorized, scale):
    for r in FORGET:
        p = _prompt(r)
        assert logits_diff_decode(memorized, memorized, p, scale, 20) == greedy_generate(memorized, p, 20)


def test_logits_diff_forget_assistant_lowers_regurgitation():
    # a lightly memorized target: the heavily trained fixture has margins no 0.2-scaled assistant can flip
    target = xavier_init(CFG, 0)
    train(target, as_examples(FORGET + RETAIN, 64), TrainConfig(lr=3e-3, epochs=40, batch_size=4, warmup_steps=0))
    assistant = clone_model(target)
    train(assistant, as_examples(FORGET, 64), TrainConfig(lr=1e-2, epochs=40, batch_size=4, warmup_steps=0))
    composed = LogitsDiffLM(target, assistant, 0.2)
    before = regurgitation_score(target, FORGET)
    assert before > 0.5
    assert regurgitation_score(composed, FORGET) < before


def test_logits_diff_vocab_mismatch():
    a = xavier_init(CFG, 0)
    b = xavier_init(ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, max_seq_len=64, vocab_size=300), 0)
    for _ in range(2):
        with pytest.raises(IncompatibleTokenizerError, match="vocab 300"):
            logits_diff_decode(a, b, [BOS, 1], 0.2, 4)


def test_logits_diff_tokenizer_id_mismatch():
    a = xavier_init(CFG, 0)
    b = xavier_init(ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, max_seq_len=64, tokenizer="bpe"), 0)
    with pytest.raises(IncompatibleTokenizerError):
        LogitsDiffLM(a, b, 0.2)


@pytest.mark.parametrize("d", [
    {"kind": "GA", "train": TrainConfig(lr=2e-5, epochs=3).to_dict()},
    {"kind": "ControlledGA", "train": TrainConfig().to_dict(), "alpha": 0.1},
    {"kind": "KLMin", "train": TrainConfig().to_dict(), "kl_weight": 2.0},
    {"kind": "GDiff", "train": TrainConfig().to_dict(), "gd_train": TrainConfig(lr=1e-4).to_dict()},
    {"kind": "LayerPerturb", "perturb": PerturbSpec(seed=3).to_dict()},
    {"kind": "LogitsDiff", "train": TrainConfig().to_dict(), "scale": 0.2, "assistant_init": "target", "seed": 1},
    {"kind": "XavierReinit", "seed": 5},
])
def test_method_spec_round_trip(d):
    spec = MethodSpec.from_dict(d)
    assert MethodSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("d", [
    {"kind": "Nope"},
    {"kind": "GA"},
    {"kind": "GDiff", "train": TrainConfig().to_dict()},
    {"kind": "KLMin", "train": TrainConfig().to_dict(), "kl_weight": -1},
    {"kind": "GA", "train": TrainConfig().to_dict(), "bogus": 1},
])
def test_method_spec_validation(d):
    with pytest.raises(ValueError):
        MethodSpec.from_dict(d)
