"""Ordered unlearning pipelines and the named presets."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ..lm_core.checkpoint import checkpoint_save
from ..lm_core.model import TinyLM, clone_model, xavier_init
from ..lm_core.optim import TrainConfig
from .logits_diff import LogitsDiffLM
from .methods import (
    MethodSpec,
    PerturbSpec,
    apply_layer_perturbation,
    apply_xavier_reinit,
    run_controlled_ga,
    run_gradient_ascent,
    run_gradient_descent,
    run_gradient_difference,
    run_kl_minimization,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple
    name: str = "custom"
    reference_row: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("pipeline needs at least one stage")
        for i, s in enumerate(self.stages):
            if s.kind == "LogitsDiff" and i != len(self.stages) - 1:
                raise ValueError("LogitsDiff is inference-time and may only be the final stage")

    def to_dict(self) -> dict:
        return {"name": self.name, "reference_row": self.reference_row, "stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineSpec":
        return cls(tuple(MethodSpec.from_dict(s) for s in d["stages"]), d.get("name", "custom"),
                   d.get("reference_row", ""))

    @property
    def needs_data(self) -> bool:
        return any(s.kind not in ("XavierReinit", "LayerPerturb") for s in self.stages)


@dataclass
class PipelineData:
    forget: Sequence = ()
    retain: Sequence = ()
    base: TinyLM | None = None  # pretrain-only model, needed when assistant_init='base'


@dataclass
class StageReport:
    index: int
    kind: str
    spec: dict
    trace: list = field(default_factory=list)
    checkpoint: str | None = None
    sha256: str | None = None
    seconds: float = 0.0
    evaluation: dict | None = None

    def to_dict(self):
        return {
            "index": self.index, "kind": self.kind, "spec": self.spec, "trace": self.trace,
            "checkpoint": self.checkpoint, "sha256": self.sha256, "seconds": self.seconds,
            "evaluation": self.evaluation,
        }


def train_assistant(target: TinyLM, spec: MethodSpec, data: PipelineData) -> TinyLM:
    """Assistant for logits difference: a model fine-tuned on the forget data.

    The default start is a copy of the target. It already speaks the corpus
    language, so extra forget epochs mostly sharpen its forget-specific
    confidence, which is what the scaled subtraction removes.
    """
    if spec.assistant_init == "base":
        if data.base is None:
            raise ValueError("LogitsDiff with assistant_init='base' needs the pretrained base model")
        start = data.base
    elif spec.assistant_init == "target":
        start = target
    else:
        start = xavier_init(target.config, spec.seed)
    assistant, _ = run_gradient_descent(start, data.forget, spec.train)
    return assistant


def run_stage(model: TinyLM, spec: MethodSpec, data: PipelineData, reference: TinyLM):
    """Apply one stage. Returns (new model or composed LM, trace, assistant or None)."""
    k = spec.kind
    if k == "GA":
        out, trace = run_gradient_ascent(model, data.forget, spec.train)
    elif k == "GD":
        out, trace = run_gradient_descent(model, data.retain, spec.train)
    elif k == "GDiff":
        out, trace = run_gradient_difference(model, data.forget, data.retain, spec.train, spec.gd_train)
    elif k == "KLMin":
        out, trace = run_kl_minimization(model, reference, data.forget, spec.train, spec.kl_weight)
    elif k == "ControlledGA":
        out, trace = run_controlled_ga(model, data.forget, spec.train, spec.alpha)
    elif k == "XavierReinit":
        return apply_xavier_reinit(model, spec.seed), [], None
    elif k == "LayerPerturb":
        return apply_layer_perturbation(model, spec.perturb), [], None
    elif k == "LogitsDiff":
        assistant = train_assistant(model, spec, data)
        return LogitsDiffLM(model, assistant, spec.scale), [], assistant
    else:
        raise ValueError(f"unknown kind {k!r}")
    return out, [e.to_dict() for e in trace], None


def run_pipeline(model: TinyLM, pipeline: PipelineSpec, data: PipelineData, out_dir=None,
                 evaluate: Callable | None = None):
    """Run stages in order; the first failing stage aborts the pipeline.

    With ``out_dir`` each stage's checkpoint is written as ``stage_<i>.ulwb``
    (for LogitsDiff the assistant is saved). ``evaluate(lm)`` results are
    attached to each stage report.
    Returns (final model or composed LM, list of StageReport).
    """
    reference = clone_model(model)
    current = model
    reports = []
    for i, spec in enumerate(pipeline.stages):
        t0 = time.perf_counter()
        log.info("stage %d: %s", i, spec.kind)
        current, trace, assistant = run_stage(current, spec, data, reference)
        rep = StageReport(i, spec.kind, spec.to_dict(), trace)
        if out_dir is not None:
            to_save = assistant if assistant is not None else current
            path = Path(out_dir) / f"stage_{i}.ulwb"
            rep.sha256 = checkpoint_save(to_save, path)
            rep.checkpoint = path.name
        rep.seconds = time.perf_counter() - t0
        if evaluate is not None:
            rep.evaluation = evaluate(current)
        reports.append(rep)
    return current, reports


def _tc(lr, epochs, wd=0.0, scheduler="linear", seed=0, batch_size=8):
    return TrainConfig(lr=lr, weight_decay=wd, epochs=epochs, scheduler=scheduler, seed=seed,
                       batch_size=batch_size)


def _ga(lr, epochs, wd=0.0, seed=0):
    return MethodSpec("GA", train=_tc(lr, epochs, wd, seed=seed))


def _gd(lr, epochs, wd=0.0, scheduler="linear", seed=0):
    return MethodSpec("GD", train=_tc(lr, epochs, wd, scheduler, seed=seed))


def preset(name: str, seed: int = 0) -> PipelineSpec:
    """Desk-scale analogs of published billion-parameter unlearning runs.

    ``reference_row`` names the large-model configuration each preset mimics.
    Learning rates are rescaled for a freshly trained ~1.4M-parameter model;
    stage order follows the reference row.
    """
    builders = {
        "ga": lambda: PipelineSpec(
            (_ga(GA_LR, 3, 2e-4, seed),), "ga", "1B Gradient Ascent: LR=2e-5, WD=2e-4, E=3"),
        "gd": lambda: PipelineSpec(
            (_gd(GD_LR, 20, 2e-4, "cosine", seed),), "gd",
            "1B Gradient Descent: LR=2e-5, WD=2e-4, cosine, E=20"),
        "gdiff": lambda: PipelineSpec(
            (MethodSpec("GDiff", train=_tc(GA_LR, 3, seed=seed), gd_train=_tc(GD_LR, 6, seed=seed + 1)),),
            "gdiff", "1B Gradient Difference: GA(LR=2e-7, WD=2e-6, E=6) -> GD"),
        "klmin": lambda: PipelineSpec(
            (MethodSpec("KLMin", train=_tc(GA_LR, 3, seed=seed), kl_weight=1.0),),
            "klmin", "1B KL Minimization: LR=2e-7, WD=2e-6, E=6"),
        "cga": lambda: PipelineSpec(
            (MethodSpec("ControlledGA", train=_tc(GA_LR, 10, seed=seed), alpha=0.1),),
            "cga", "1B Controlled GA: LR=2e-5, E=10, no WD, alpha=0.1"),
        "xavier": lambda: PipelineSpec(
            (MethodSpec("XavierReinit", seed=seed + 1_000_003),), "xavier", "Xavier init (1B/7B)"),
        "gdf_ga": lambda: PipelineSpec(
            (_ga(GA_LR, 3, seed=seed), _gd(GD_LR / 10, 3, seed=seed + 1), _ga(GA_LR, 1, seed=seed + 2)),
            "gdf_ga", "7B GDf -> GA: GA(LR=1e-5, E=3) -> GD(LR=2e-6, E=3) -> GA(LR=2e-5, E=1)"),
        "gdf_gdf": lambda: PipelineSpec(
            (_ga(GA_LR, 3, seed=seed), _gd(GD_LR / 10, 3, seed=seed + 1), _ga(GA_LR, 1, seed=seed + 2),
             _gd(GD_LR / 100, 1, seed=seed + 3)),
            "gdf_gdf", "7B GDf -> GDf: ... -> GA(LR=2e-5, E=1) -> GD(LR=2e-8, E=1)"),
        "gd_ga": lambda: PipelineSpec(
            (_gd(GD_LR, 20, seed=seed), _ga(GA_LR, 3, seed=seed + 1)),
            "gd_ga", "7B GD -> GA: GD(LR=2e-5, E=20) -> GA(LR=2e-4, E=3)"),
        "perturb": lambda: PipelineSpec(
            (MethodSpec("LayerPerturb", perturb=PerturbSpec(seed=seed)),), "perturb",
            "Layer-wise perturbation (knowledge truncation) ratios"),
        "logitdiff": lambda: PipelineSpec(
            (MethodSpec("LogitsDiff", train=_tc(ASSIST_LR, ASSIST_EPOCHS, seed=seed), scale=0.2, seed=seed),),
            "logitdiff", "Logits difference, scale 0.2, temperature 0"),
    }
    if name not in builders:
        raise KeyError(f"unknown method/pipeline id {name!r}; choose from {sorted(builders)}")
    return builders[name]()


PRESETS = ("ga", "gd", "gdiff", "klmin", "cga", "xavier", "gdf_ga", "gdf_gdf", "gd_ga", "perturb", "logitdiff")

# desk-scale learning rates (see preset docstring)
GA_LR = 1e-4
GD_LR = 3e-4
ASSIST_LR = 3e-3
ASSIST_EPOCHS = 40
