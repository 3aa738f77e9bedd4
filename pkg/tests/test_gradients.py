import math

import pytest
import torch

from ulwb.lm_core import (
    EmptyMaskError,
    backward,
    collate,
    encode_pair,
    encode_text,
    forward,
    nll,
    token_nlls,
)
from ulwb.lm_core.ops import batch_loss


def _batch():
    return collate([encode_text("hello world", 32), encode_pair("Q: ab", " cd", 32, score_prompt=False)])


def test_uniform_logits_nll_is_log_vocab(tiny_model):
    with torch.no_grad():
        tiny_model.lm_head.weight.zero_()
    _, mean = nll(tiny_model, [256, 1, 2, 3], [False, True, True, True])
    assert mean == pytest.approx(math.log(260), abs=1e-6)
    assert math.log(260) == pytest.approx(5.5607, abs=1e-4)


def test_dominant_logits_nll_near_zero():
    tokens = torch.tensor([256, 7, 9, 11])
    logits = torch.zeros(4, 260)
    logits[torch.arange(3), tokens[1:]] = 50.0
    per = token_nlls(logits, tokens)
    assert per[0] == 0
    assert torch.all(per[1:] < 1e-15 + 260 * math.exp(-50))


def test_nll_equals_chain_rule_product(tiny_model64):
    tokens = [256, 65, 66]
    with torch.no_grad():
        logits = forward(tiny_model64, tokens)
    p1 = torch.softmax(logits[0], -1)[65]
    p2 = torch.softmax(logits[1], -1)[66]
    joint = float(p1 * p2)
    per, mean = nll(tiny_model64, tokens, [False, True, True])
    assert float(per.sum()) == pytest.approx(-math.log(joint), rel=1e-12)
    assert mean == pytest.approx(-math.log(joint) / 2, rel=1e-12)


def test_nll_mask_selects_positions(tiny_model):
    tokens = [256, 1, 2, 3, 4]
    full, _ = nll(tiny_model, tokens, [False, True, True, True, True])
    part, mean = nll(tiny_model, tokens, [False, False, True, False, True])
    assert torch.equal(part, full[[1, 3]])
    assert mean == pytest.approx(float(full[[1, 3]].mean()))


def test_empty_mask_raises(tiny_model):
    with pytest.raises(EmptyMaskError):
        nll(tiny_model, [256, 1, 2], [False, False, False])


def test_ascent_is_exact_negation(tiny_model):
    d = backward(tiny_model, _batch(), "descent")
    a = backward(tiny_model, _batch(), "ascent")
    assert d.keys() == a.keys()
    for k in d:
        assert torch.equal(a[k], -d[k])


def test_gradient_names_and_shapes(tiny_model):
    g = backward(tiny_model, _batch())
    params = dict(tiny_model.named_parameters())
    assert g.keys() == params.keys()
    assert all(g[k].shape == params[k].shape for k in g)
    assert all(torch.isfinite(v).all() for v in g.values())


def test_identical_sequences_give_identical_per_sample_gradients(tiny_model):
    ex = encode_text("same text", 32)
    g1 = backward(tiny_model, collate([ex]))
    g2 = backward(tiny_model, collate([ex]))
    g_pair = backward(tiny_model, collate([ex, ex]))
    for k in g1:
        assert torch.equal(g1[k], g2[k])
        torch.testing.assert_close(g_pair[k], g1[k], rtol=1e-5, atol=1e-7)


def test_finite_difference_oracle(tiny_model64):
    """Central differences in float64 (h=1e-4) on 10 coordinates of every tensor."""
    model = tiny_model64
    batch = _batch()
    grads = backward(model, batch)
    gen = torch.Generator().manual_seed(0)
    h = 1e-4
    worst = 0.0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.view(-1)
            for idx in torch.randperm(flat.numel(), generator=gen)[:10].tolist():
                orig = float(flat[idx])
                flat[idx] = orig + h
                up = float(batch_loss(model, batch)[0])
                flat[idx] = orig - h
                down = float(batch_loss(model, batch)[0])
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                an = float(grads[name].view(-1)[idx])
                err = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                worst = max(worst, err)
                assert err < 1e-3, (name, idx, fd, an)
    assert worst < 1e-3
