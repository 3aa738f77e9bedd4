import pytest

from ulwb.lm_core import (
    EOS,
    PromptTooLongError,
    TrainConfig,
    encode_pair,
    forward,
    greedy_generate,
    greedy_generate_batch,
    tokenize,
    train,
)


def _manual_greedy(model, prompt, n):
    seq = list(prompt)
    for _ in range(n):
        nxt = int(forward(model, seq)[-1].argmax())
        seq.append(nxt)
        if nxt == EOS:
            break
    return seq


def test_zero_budget_returns_prompt(tiny_model):
    assert greedy_generate(tiny_model, [256, 1, 2], 0) == [256, 1, 2]


def test_matches_step_by_step_argmax(tiny_model):
    prompt = [256] + tokenize("abc")
    assert greedy_generate(tiny_model, prompt, 12) == _manual_greedy(tiny_model, prompt, 12)


def test_batched_left_padding_matches_single(tiny_model):
    prompts = [[256, 5], [256] + tokenize("a longer prompt"), [256, 9, 9, 9]]
    batch = greedy_generate_batch(tiny_model, prompts, 8)
    for p, out in zip(prompts, batch):
        assert p + out == _manual_greedy(tiny_model, p, 8)


def test_per_prompt_budgets(tiny_model):
    out = greedy_generate_batch(tiny_model, [[256, 1], [256, 2]], [0, 3], stop_tokens=())
    assert out[0] == [] and len(out[1]) == 3


def test_deterministic(tiny_model):
    p = [256] + tokenize("xyz")
    assert greedy_generate(tiny_model, p, 10) == greedy_generate(tiny_model, p, 10)


def test_prompt_too_long(tiny_model):
    with pytest.raises(PromptTooLongError):
        greedy_generate(tiny_model, [1] * 64, 1)
    with pytest.raises(ValueError):
        greedy_generate(tiny_model, [], 1)


def test_budget_capped_by_context(tiny_model):
    out = greedy_generate_batch(tiny_model, [[1] * 60], 100, stop_tokens=())
    assert len(out[0]) == 4


def test_memorized_pair_is_regurgitated(tiny_model):
    ex = encode_pair("Q: what colour A:", " violet", 64)
    train(tiny_model, [ex], TrainConfig(lr=1e-2, epochs=60, batch_size=1, warmup_steps=0))
    prompt = [256] + tokenize("Q: what colour A:")
    out = greedy_generate(tiny_model, prompt, 8)
    assert out[len(prompt):] == tokenize(" violet") + [EOS]
