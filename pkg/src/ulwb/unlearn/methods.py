"""Weight-space unlearning algorithms.

Each ``run_*``/``apply_*`` function leaves its input model untouched and returns
a new model (plus the per-epoch loss trace for trained methods).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import torch
import torch.nn.functional as F

from ..datagen.records import Record
from ..lm_core.model import LAYER_COMPONENTS, TinyLM, clone_model, layer_component_params, xavier_init
from ..lm_core.ops import Batch
from ..lm_core.optim import TrainConfig
from ..lm_core.tokenizer import Example, encode_pair
from ..lm_core.training import EpochLog, train

KINDS = ("GA", "GD", "GDiff", "KLMin", "ControlledGA", "XavierReinit", "LayerPerturb", "LogitsDiff")
TRAINED_KINDS = ("GA", "GD", "GDiff", "KLMin", "ControlledGA")

DEFAULT_RATIOS = {
    "self_attn.q_proj": 0.0,
    "self_attn.k_proj": 1e-5,
    "self_attn.v_proj": 1e-4,
    "self_attn.o_proj": 0.01,
    "mlp.gate_proj": 0.03,
    "mlp.up_proj": 0.0,
    "mlp.down_proj": 0.07,
}


class UnknownComponentError(KeyError):
    pass


@dataclass(frozen=True)
class PerturbSpec:
    ratios: dict = field(default_factory=lambda: dict(DEFAULT_RATIOS))
    freeze_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.ratios) - set(LAYER_COMPONENTS)
        if unknown:
            raise UnknownComponentError(f"unknown component name(s): {sorted(unknown)}")
        if any(r < 0 for r in self.ratios.values()):
            raise ValueError("modify ratios must be >= 0")
        if not 0.0 <= self.freeze_fraction <= 1.0:
            raise ValueError("freeze_fraction must be in [0, 1]")

    def to_dict(self):
        return {"ratios": dict(self.ratios), "freeze_fraction": self.freeze_fraction, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d.get("ratios", DEFAULT_RATIOS)), d.get("freeze_fraction", 0.75), d.get("seed", 0))


@dataclass(frozen=True)
class MethodSpec:
    """One unlearning stage.

    ``train`` configures the gradient stage (for ``GDiff`` the ascent half and
    ``gd_train`` the descent half; for ``LogitsDiff`` the assistant fine-tune).
    """

    kind: str
    train: TrainConfig | None = None
    gd_train: TrainConfig | None = None
    alpha: float = 1.0
    kl_weight: float = 1.0
    perturb: PerturbSpec | None = None
    scale: float = 0.2
    seed: int = 0
    assistant_init: str = "target"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.kind in TRAINED_KINDS + ("LogitsDiff",) and self.train is None:
            raise ValueError(f"{self.kind} needs a train config")
        if self.kind == "GDiff" and self.gd_train is None:
            raise ValueError("GDiff needs gd_train")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.kind == "LayerPerturb" and self.perturb is None:
            object.__setattr__(self, "perturb", PerturbSpec())
        if self.assistant_init not in ("base", "target", "xavier"):
            raise ValueError(f"unknown assistant_init {self.assistant_init!r}")

    def with_train(self, **changes) -> "MethodSpec":
        return replace(self, train=replace(self.train, **changes))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.train is not None:
            d["train"] = self.train.to_dict()
        if self.gd_train is not None:
            d["gd_train"] = self.gd_train.to_dict()
        if self.kind == "ControlledGA":
            d["alpha"] = self.alpha
        if self.kind == "KLMin":
            d["kl_weight"] = self.kl_weight
        if self.kind == "LayerPerturb":
            d["perturb"] = self.perturb.to_dict()
        if self.kind == "LogitsDiff":
            d["scale"] = self.scale
            d["assistant_init"] = self.assistant_init
        if self.kind in ("XavierReinit", "LogitsDiff"):
            d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        d = dict(d)
        kw = {"kind": d.pop("kind")}
        for key in ("train", "gd_train"):
            if key in d:
                kw[key] = TrainConfig.from_dict(d.pop(key))
        if "perturb" in d:
            kw["perturb"] = PerturbSpec.from_dict(d.pop("perturb"))
        for key in ("alpha", "kl_weight", "scale"):
            if key in d:
                kw[key] = float(d.pop(key))
        if "seed" in d:
            kw["seed"] = int(d.pop("seed"))
        if "assistant_init" in d:
            kw["assistant_init"] = d.pop("assistant_init")
        if d:
            raise ValueError(f"unexpected method fields: {sorted(d)}")
        return cls(**kw)


def as_examples(data: Sequence, max_len: int) -> list[Example]:
    """Records become BOS + input + ' ' + output + EOS, every token scored."""
    out = []
    for item in data:
        if isinstance(item, Example):
            out.append(item)
        elif isinstance(item, Record):
            out.append(encode_pair(item.input, " " + item.output, max_len, key=item.id))
        else:
            raise TypeError(f"cannot train on {type(item).__name__}")
    return out


def _require(data, what):
    if not data:
        raise ValueError(f"{what} is empty")


def run_gradient_ascent(model: TinyLM, forget, cfg: TrainConfig) -> tuple[TinyLM, list[EpochLog]]:
    _require(forget, "forget data")
    out = clone_model(model)
    trace = train(out, as_examples(forget, model.config.max_seq_len), cfg, kind="ascent")
    return out, trace


def run_gradient_descent(model: TinyLM, retain, cfg: TrainConfig | None) -> tuple[TinyLM, list[EpochLog]]:
    """Plain fine-tuning on retain data. ``cfg=None`` means zero epochs (identity)."""
    out = clone_model(model)
    if cfg is None:
        return out, []
    _require(retain, "retain data")
    return out, train(out, as_examples(retain, model.config.max_seq_len), cfg, kind="descent")


def run_gradient_difference(model, forget, retain, ga_cfg: TrainConfig, gd_cfg: TrainConfig):
    _require(forget, "forget data")
    _require(retain, "retain data")
    mid, ga_trace = run_gradient_ascent(model, forget, ga_cfg)
    out, gd_trace = run_gradient_descent(mid, retain, gd_cfg)
    return out, ga_trace + gd_trace


def kl_to_reference(logits: torch.Tensor, ref_logits: torch.Tensor, target_mask: torch.Tensor) -> torch.Tensor:
    """Mean KL(current || reference) over next-token distributions at the positions
    that predict masked-in targets."""
    logp = F.log_softmax(logits[:, :-1], dim=-1)
    ref = F.log_softmax(ref_logits[:, :-1], dim=-1)
    per = (logp.exp() * (logp - ref)).sum(-1)
    return per[target_mask[:, 1:]].mean()


def run_kl_minimization(model: TinyLM, reference: TinyLM, forget, cfg: TrainConfig,
                        kl_weight: float = 1.0) -> tuple[TinyLM, list[EpochLog]]:
    """Gradient ascent on the forget NLL plus ``kl_weight * KL(current || reference)``."""
    _require(forget, "forget data")
    if kl_weight < 0:
        raise ValueError("kl_weight must be >= 0")
    frozen = clone_model(reference)
    frozen.requires_grad_(False)

    def regularizer(logits, batch: Batch):
        with torch.no_grad():
            ref_logits = frozen(batch.tokens)
        return kl_weight * kl_to_reference(logits, ref_logits, batch.loss_mask)

    out = clone_model(model)
    reg = regularizer if kl_weight > 0 else None
    trace = train(out, as_examples(forget, model.config.max_seq_len), cfg, kind="ascent", regularizer=reg)
    return out, trace


def run_controlled_ga(model: TinyLM, forget, cfg: TrainConfig, alpha: float) -> tuple[TinyLM, list[EpochLog]]:
    """Gradient ascent whose clipped gradient is scaled by ``alpha`` before the step."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    _require(forget, "forget data")
    out = clone_model(model)
    trace = train(out, as_examples(forget, model.config.max_seq_len), cfg, kind="ascent", grad_scale=alpha)
    return out, trace


def apply_xavier_reinit(model: TinyLM, seed: int) -> TinyLM:
    return xavier_init(model.config, seed)


def freeze_boundary(n_layers: int, freeze_fraction: float) -> int:
    return math.floor(freeze_fraction * n_layers)


def apply_layer_perturbation(model: TinyLM, spec: PerturbSpec) -> TinyLM:
    """Add ``N(0, 1) * ratio`` noise to each component of the unfrozen (upper) layers."""
    unknown = set(spec.ratios) - set(LAYER_COMPONENTS)
    if unknown:
        raise UnknownComponentError(f"unknown component name(s): {sorted(unknown)}")
    out = clone_model(model)
    gen = torch.Generator().manual_seed(int(spec.seed))
    n = model.config.n_layers
    with torch.no_grad():
        for layer in range(freeze_boundary(n, spec.freeze_fraction), n):
            params = layer_component_params(out, layer)
            for name in LAYER_COMPONENTS:
                ratio = spec.ratios.get(name, 0.0)
                if ratio == 0:
                    continue
                w = params[name]
                w.add_(torch.randn(w.shape, generator=gen, dtype=w.dtype) * ratio)
    return out
