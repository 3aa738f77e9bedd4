"""Small pre-norm decoder-only transformer with SwiGLU feed-forward blocks.

Per-layer weight components use the OLMo/LLaMA naming
(``self_attn.{q,k,v,o}_proj``, ``mlp.{gate,up,down}_proj``) so layer-wise
perturbation configs map onto this model one-to-one.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import TOKENIZER_ID, VOCAB_SIZE

ATTN_COMPONENTS = ("self_attn.q_proj", "self_attn.k_proj", "self_attn.v_proj", "self_attn.o_proj")
MLP_COMPONENTS = ("mlp.gate_proj", "mlp.up_proj", "mlp.down_proj")
LAYER_COMPONENTS = ATTN_COMPONENTS + MLP_COMPONENTS


class SequenceTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 8
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 512
    seed: int = 0
    tokenizer: str = TOKENIZER_ID

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in u64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x):
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class KVCache:
    """Per-layer key/value tensors accumulated during incremental decoding."""

    def __init__(self, n_layers: int):
        self.k = [None] * n_layers
        self.v = [None] * n_layers

    @property
    def length(self) -> int:
        return 0 if self.k[0] is None else self.k[0].shape[2]


class SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.head_dim = d // cfg.n_heads
        self.q_proj = nn.Linear(d, d, bias=False)
        self.k_proj = nn.Linear(d, d, bias=False)
        self.v_proj = nn.Linear(d, d, bias=False)
        self.o_proj = nn.Linear(d, d, bias=False)

    def forward(self, x, allowed, cache: KVCache | None = None, layer: int = 0):
        B, T, D = x.shape
        shape = (B, T, self.n_heads, self.head_dim)
        q = self.q_proj(x).view(shape).transpose(1, 2)
        k = self.k_proj(x).view(shape).transpose(1, 2)
        v = self.v_proj(x).view(shape).transpose(1, 2)
        if cache is not None:
            if cache.k[layer] is not None:
                k = torch.cat([cache.k[layer], k], dim=2)
                v = torch.cat([cache.v[layer], v], dim=2)
            cache.k[layer], cache.v[layer] = k, v
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.o_proj(out.transpose(1, 2).reshape(B, T, D))


class MLP(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.gate_proj = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.up_proj = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.down_proj = nn.Linear(cfg.d_ff, cfg.d_model, bias=False)

    def forward(self, x):
        return self.down_proj(F.silu(self.gate_proj(x)) * self.up_proj(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.input_layernorm = RMSNorm(cfg.d_model)
        self.self_attn = SelfAttention(cfg)
        self.post_attention_layernorm = RMSNorm(cfg.d_model)
        self.mlp = MLP(cfg)

    def forward(self, x, allowed, cache=None, layer=0):
        x = x + self.self_attn(self.input_layernorm(x), allowed, cache, layer)
        return x + self.mlp(self.post_attention_layernorm(x))


class TinyLM(nn.Module):
    """Causal LM. ``forward`` maps token ids ``[B, T]`` to logits ``[B, T, V]``."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.embed_tokens = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.embed_positions = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.norm = RMSNorm(cfg.d_model)
        self.lm_head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)

    def new_cache(self) -> KVCache:
        return KVCache(self.config.n_layers)

    def forward(self, tokens, positions=None, key_mask=None, cache: KVCache | None = None):
        """
        Args:
            tokens: ``[B, T]`` ids (or ``[T]``, promoted to a batch of one).
            positions: ``[B, T]`` position ids; defaults to contiguous positions
                following whatever is already in ``cache``.
            key_mask: ``[B, T_total]`` bool, False for padding keys (left-padded
                batches). Covers cached keys as well as the new ones.
            cache: optional KV cache, extended in place.
        """
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        B, T = tokens.shape
        past = cache.length if cache is not None else 0
        if positions is None:
            positions = torch.arange(past, past + T, device=tokens.device).expand(B, T)
        if int(positions.max()) >= self.config.max_seq_len:
            raise SequenceTooLongError(
                f"position {int(positions.max())} exceeds max_seq_len={self.config.max_seq_len}")
        total = past + T
        q_idx = torch.arange(past, total).unsqueeze(1)
        k_idx = torch.arange(total).unsqueeze(0)
        allowed = (k_idx <= q_idx).view(1, 1, T, total)
        if key_mask is not None:
            # padded queries still see themselves so no softmax row is empty
            allowed = (allowed & key_mask.view(B, 1, 1, total)) | (k_idx == q_idx).view(1, 1, T, total)
        x = self.embed_tokens(tokens) + self.embed_positions(positions)
        for i, layer in enumerate(self.layers):
            x = layer(x, allowed, cache, i)
        return self.lm_head(self.norm(x))


def layer_component_params(model: TinyLM, layer: int) -> dict[str, nn.Parameter]:
    """The seven weight components of one decoder layer, keyed by component name."""
    block = model.layers[layer]
    return {name: block.get_submodule(name).weight for name in LAYER_COMPONENTS}


def xavier_init(cfg: ModelConfig, seed: int | None = None) -> TinyLM:
    """Fresh model: every 2-D weight ~ U[-a, a], a = sqrt(6 / (fan_in + fan_out)).

    Norm gains are one; the model carries no bias vectors.
    """
    seed = cfg.seed if seed is None else seed
    gen = torch.Generator().manual_seed(int(seed))
    model = TinyLM(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() == 2:
                fan_out, fan_in = p.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
            elif name.endswith("norm.weight") or "layernorm" in name:
                p.fill_(1.0)
            else:
                p.zero_()
    return model


def clone_model(model: TinyLM) -> TinyLM:
    twin = TinyLM(model.config).to(next(model.parameters()).dtype)
    twin.load_state_dict(model.state_dict())
    return twin


def params_equal(a: TinyLM, b: TinyLM) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
