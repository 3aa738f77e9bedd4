"""Experiment configuration, run manifests and the stage runners behind the CLI.

Output directory layout (``output_dir``)::

    data/                      generated dataset (JSONL + corpus_spec.json)
    base.ulwb  base.json       pretrained model + its training record
    target.ulwb target.json    memorized model + its training record
    runs/<name>/               one unlearning run: stage_<i>.ulwb, manifest.json
    evals/<label>.json         standalone evaluations
    sweeps/<name>/<run_id>/    one directory per grid point, plus leaderboard files
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import itertools
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .datagen import CorpusSpec, Dataset, generate_dataset, load_dataset, save_dataset
from .eval import ScoreReport, format_table, full_report
from .eval.scoring import COLUMNS, DEFAULT_UTILITY_THRESHOLD
from .lm_core import (
    ModelConfig,
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    encode_pair,
    encode_text,
    file_sha256,
    train,
    xavier_init,
)
from .unlearn import LogitsDiffLM, PipelineData, PipelineSpec, preset, run_pipeline
from .unlearn.pipeline import PRESETS

log = logging.getLogger(__name__)

MANIFEST_KIND = "ulwb-run"
EVAL_KIND = "ulwb-eval"
# keys whose values vary between otherwise identical runs; left out of content hashes
VOLATILE_KEYS = frozenset({"seconds", "wall_clock", "paths", "content_hash", "created"})


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class MissingArtifactError(FileNotFoundError):
    """An upstream file (dataset, base or target checkpoint) does not exist yet."""


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class EvalFlags:
    utility_threshold: float = DEFAULT_UTILITY_THRESHOLD
    splits: str = "train"       # which forget/retain splits are scored: "train" or "val"
    after_unlearn: bool = True  # score the final model of every unlearning run
    per_stage: bool = False     # also score after each intermediate stage
    audit: bool = False         # keep per-record generations in the report extras

    def __post_init__(self):
        if self.splits not in ("train", "val"):
            raise ConfigError(f"eval.splits must be 'train' or 'val', got {self.splits!r}")
        if not 0.0 <= self.utility_threshold <= 1.0:
            raise ConfigError("eval.utility_threshold must be in [0, 1]")


SWEEP_AXES = ("lr", "weight_decay", "epochs", "alpha", "kl_weight")


@dataclass
class ExperimentConfig:
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=PRETRAIN_LR, epochs=PRETRAIN_EPOCHS, scheduler="cosine", batch_size=8))
    memorize: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=MEMORIZE_LR, epochs=MEMORIZE_EPOCHS, scheduler="linear", batch_size=8))
    pipeline: PipelineSpec | None = None
    eval: EvalFlags = field(default_factory=EvalFlags)
    sweep: dict = field(default_factory=dict)
    output_dir: str = "runs/default"
    seed: int = 0

    # ---- paths
    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def base_path(self) -> Path:
        return self.out / "base.ulwb"

    @property
    def target_path(self) -> Path:
        return self.out / "target.ulwb"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "corpus": self.corpus.to_dict(),
            "model": self.model.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "memorize": self.memorize.to_dict(),
            "pipeline": self.pipeline.to_dict() if self.pipeline is not None else None,
            "eval": self.eval.__dict__.copy(),
            "sweep": copy.deepcopy(self.sweep),
        }

    def snapshot(self) -> dict:
        """Config without location fields, as recorded in manifests."""
        d = self.to_dict()
        d.pop("output_dir")
        return d


# desk-scale defaults for building the base and target models
PRETRAIN_LR = 2e-3
PRETRAIN_EPOCHS = 4
MEMORIZE_LR = 3e-4
MEMORIZE_EPOCHS = 40


def _section(cls, raw, seed_value, what):
    """Build a dataclass section; a missing ``seed`` key inherits ``seed_value``."""
    raw = dict(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} must be a mapping")
    if seed_value is not None and "seed" in cls.__dataclass_fields__:
        raw.setdefault("seed", seed_value)
    unknown = set(raw) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown {what} field(s): {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what}: {e}") from e


def _pipeline_from(raw, seed: int) -> PipelineSpec | None:
    if raw is None:
        return None
    try:
        if isinstance(raw, str):
            return preset(raw, seed)
        if isinstance(raw, dict) and "preset" in raw:
            return preset(raw["preset"], int(raw.get("seed", seed)))
        if isinstance(raw, dict):
            return PipelineSpec.from_dict(raw)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid pipeline: {e}") from e
    raise ConfigError("pipeline must be a preset id or a mapping with a 'stages' list")


def config_from_dict(raw: dict, seed: int | None = None) -> ExperimentConfig:
    """Parse a config mapping. ``seed`` (e.g. from ``--seed``) overrides the file's
    global seed; section seeds not given explicitly derive from the global one."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    raw = dict(raw)
    known = {"seed", "output_dir", "corpus", "model", "pretrain", "memorize", "pipeline", "eval", "sweep"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    g = int(seed if seed is not None else raw.get("seed", 0))
    if seed is not None:
        # an explicit run seed replaces every per-section seed
        for key in ("corpus", "model", "pretrain", "memorize"):
            if isinstance(raw.get(key), dict):
                raw[key] = {k: v for k, v in raw[key].items() if k != "seed"}
    pre_defaults = ExperimentConfig().pretrain.to_dict()
    mem_defaults = ExperimentConfig().memorize.to_dict()
    pre_defaults.pop("seed")
    mem_defaults.pop("seed")
    sweep = raw.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError("sweep must be a mapping of axis -> list of values")
    bad = set(sweep) - set(SWEEP_AXES)
    if bad:
        raise ConfigError(f"unknown sweep axis/axes {sorted(bad)}; allowed: {list(SWEEP_AXES)}")
    for axis, values in sweep.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{axis} must be a non-empty list")
    return ExperimentConfig(
        corpus=_section(CorpusSpec, raw.get("corpus"), g, "corpus"),
        model=_section(ModelConfig, raw.get("model"), g, "model"),
        pretrain=_section(TrainConfig, {**pre_defaults, **(raw.get("pretrain") or {})}, g, "pretrain"),
        memorize=_section(TrainConfig, {**mem_defaults, **(raw.get("memorize") or {})}, g + 1, "memorize"),
        pipeline=_pipeline_from(raw.get("pipeline"), g),
        eval=_section(EvalFlags, raw.get("eval"), None, "eval"),
        sweep=sweep,
        output_dir=str(raw.get("output_dir", "runs/default")),
        seed=g,
    )


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {p}: {e}") from e
    if isinstance(raw, dict) and raw.get("kind") == MANIFEST_KIND:
        raw = dict(raw["config"], output_dir=raw.get("paths", {}).get("output_dir", "runs/default"))
    return config_from_dict(raw, seed)


# --------------------------------------------------------------------------- io helpers


def write_json(obj, path) -> None:
    """Atomic JSON write (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {k: _strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [_strip_volatile(v) for v in obj]
    return obj


def manifest_hash(manifest: dict) -> str:
    """sha256 of the canonical JSON of a manifest without timings and locations."""
    canon = json.dumps(_strip_volatile(manifest), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def dataset_fingerprint(data_dir) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(data_dir).iterdir()):
        if p.is_file():
            h.update(p.name.encode() + b"\0" + file_sha256(p).encode() + b"\n")
    return h.hexdigest()


def _require(path: Path, what: str, hint: str):
    if not path.exists():
        raise MissingArtifactError(f"{what} not found at {path}; run `ulwb {hint}` first")


def load_data(cfg: ExperimentConfig) -> Dataset:
    _require(cfg.data_dir, "dataset", "datagen")
    return load_dataset(cfg.data_dir)


# --------------------------------------------------------------------------- table vocabulary


def _fmt(x) -> str:
    return f"{x:g}" if isinstance(x, float) else str(x)


def _train_terms(tc: TrainConfig) -> dict:
    return {"LR": tc.lr, "WD": tc.weight_decay, "E": tc.epochs, "scheduler": tc.scheduler}


def table_terms(stage) -> dict:
    """A stage's settings under the column names used in result tables."""
    terms: dict[str, Any] = {"method": stage.kind}
    if stage.kind == "GDiff":
        terms["GA"] = _train_terms(stage.train)
        terms["GD"] = _train_terms(stage.gd_train)
    elif stage.train is not None:
        terms.update(_train_terms(stage.train))
    if stage.kind == "ControlledGA":
        terms["alpha"] = stage.alpha
    if stage.kind == "KLMin":
        terms["λ"] = stage.kl_weight
    if stage.kind == "LogitsDiff":
        terms["scale"] = stage.scale
    if stage.kind == "LayerPerturb":
        terms["ratios"] = dict(stage.perturb.ratios)
        terms["freeze_fraction"] = stage.perturb.freeze_fraction
    return terms


def describe_stage(stage) -> str:
    """One-line summary such as ``GA: LR=0.0001, WD=0, E=3, scheduler=linear``."""
    t = table_terms(stage)
    parts = []
    for k, v in t.items():
        if k == "method":
            continue
        if isinstance(v, dict):
            inner = ", ".join(f"{ik}={_fmt(iv)}" for ik, iv in v.items())
            parts.append(f"{k}({inner})")
        else:
            parts.append(f"{k}={_fmt(v)}")
    return f"{stage.kind}: " + ", ".join(parts) if parts else stage.kind


# --------------------------------------------------------------------------- stages


def cmd_datagen(cfg: ExperimentConfig, out_dir=None, scale: float | None = None) -> dict:
    spec = cfg.corpus.scaled(scale) if scale is not None else cfg.corpus
    ds = generate_dataset(spec)
    paths = save_dataset(ds, out_dir or cfg.data_dir)
    return {name: str(p) for name, p in paths.items()}


def pretrain_examples(ds: Dataset, max_len: int):
    return [encode_text(d.text, max_len) for d in ds.corpus.pretrain]


def memorize_examples(ds: Dataset, max_len: int):
    """forget_train then retain_train, each record as input + ' ' + output."""
    return [encode_pair(r.input, " " + r.output, max_len, key=r.id)
            for r in list(ds.corpus.forget_train) + list(ds.corpus.retain_train)]


def _train_record(cfg_section: TrainConfig, trace, path: Path, sha: str, seconds: float, extra: dict) -> dict:
    return {"train": cfg_section.to_dict(), "trace": [e.to_dict() for e in trace],
            "checkpoint": path.name, "sha256": sha, "seconds": seconds, "artifact_version": __version__,
            **extra}


def cmd_pretrain(cfg: ExperimentConfig) -> Path:
    ds = load_data(cfg)
    t0 = time.perf_counter()
    model = xavier_init(cfg.model, cfg.model.seed)
    trace = train(model, pretrain_examples(ds, cfg.model.max_seq_len), cfg.pretrain)
    sha = checkpoint_save(model, cfg.base_path)
    write_json(_train_record(cfg.pretrain, trace, cfg.base_path, sha, time.perf_counter() - t0,
                             {"model": cfg.model.to_dict(), "dataset": dataset_fingerprint(cfg.data_dir)}),
               cfg.out / "base.json")
    return cfg.base_path


def cmd_memorize(cfg: ExperimentConfig) -> Path:
    ds = load_data(cfg)
    _require(cfg.base_path, "base checkpoint", "pretrain")
    t0 = time.perf_counter()
    model, _ = checkpoint_load(cfg.base_path)
    trace = train(model, memorize_examples(ds, model.config.max_seq_len), cfg.memorize)
    sha = checkpoint_save(model, cfg.target_path)
    write_json(_train_record(cfg.memorize, trace, cfg.target_path, sha, time.perf_counter() - t0,
                             {"base_sha256": file_sha256(cfg.base_path),
                              "dataset": dataset_fingerprint(cfg.data_dir)}),
               cfg.out / "target.json")
    return cfg.target_path


def eval_splits(ds: Dataset, which: str):
    c = ds.corpus
    return (c.forget_train, c.retain_train) if which == "train" else (c.forget_val, c.retain_val)


def evaluate(lm, ds: Dataset, flags: EvalFlags) -> ScoreReport:
    forget, retain = eval_splits(ds, flags.splits)
    audit = [] if flags.audit else None
    rep = full_report(lm, forget, retain, ds.members, ds.nonmembers, ds.probe, flags.utility_threshold, audit)
    if audit is not None:
        rep.extras["generations"] = [g.to_dict() for g in audit]
    return rep


def resolve_pipeline(cfg: ExperimentConfig, method: str | None) -> PipelineSpec:
    if method is not None:
        if method not in PRESETS:
            raise ConfigError(f"unknown method/pipeline id {method!r}; choose from {list(PRESETS)}")
        return preset(method, cfg.seed)
    if cfg.pipeline is None:
        raise ConfigError("no pipeline in config; pass --method ID or add a 'pipeline' section")
    return cfg.pipeline


def run_unlearning(cfg: ExperimentConfig, pipeline: PipelineSpec, run_dir: Path,
                   ds: Dataset | None = None) -> dict:
    """Run ``pipeline`` on the target checkpoint, write checkpoints + manifest into ``run_dir``."""
    _require(cfg.target_path, "target checkpoint", "memorize")
    if ds is None and (pipeline.needs_data or cfg.eval.after_unlearn) and cfg.data_dir.exists():
        ds = load_dataset(cfg.data_dir)
    if ds is None and pipeline.needs_data:
        raise MissingArtifactError(f"pipeline {pipeline.name!r} needs training data; run `ulwb datagen` first")
    run_dir.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    target, _ = checkpoint_load(cfg.target_path)
    base = None
    if any(s.kind == "LogitsDiff" and s.assistant_init == "base" for s in pipeline.stages):
        _require(cfg.base_path, "base checkpoint", "pretrain")
        base, _ = checkpoint_load(cfg.base_path)
    data = PipelineData(forget=ds.corpus.forget_train if ds else (),
                        retain=ds.corpus.retain_train if ds else (), base=base)
    per_stage = (lambda lm: evaluate(lm, ds, cfg.eval).to_dict()) if (cfg.eval.per_stage and ds) else None
    final, reports = run_pipeline(target, pipeline, data, out_dir=run_dir, evaluate=per_stage)

    stages = []
    for rep, spec in zip(reports, pipeline.stages):
        d = rep.to_dict()
        d["table"] = table_terms(spec)
        d["summary"] = describe_stage(spec)
        stages.append(d)
    report = evaluate(final, ds, cfg.eval).to_dict() if (cfg.eval.after_unlearn and ds) else None
    manifest = {
        "kind": MANIFEST_KIND,
        "artifact_version": __version__,
        "method": pipeline.name,
        "reference_row": pipeline.reference_row,
        "config": {**cfg.snapshot(), "pipeline": pipeline.to_dict()},
        "inputs": {
            "target_sha256": file_sha256(cfg.target_path),
            "base_sha256": file_sha256(cfg.base_path) if base is not None else None,
            "dataset": dataset_fingerprint(cfg.data_dir) if ds is not None else None,
        },
        "stages": stages,
        "final": {"checkpoint": stages[-1]["checkpoint"], "sha256": stages[-1]["sha256"],
                  "composed": isinstance(final, LogitsDiffLM)},
        "report": report,
        "wall_clock": {"total_seconds": time.perf_counter() - t_start,
                       "stages": [s["seconds"] for s in stages]},
        "paths": {"output_dir": str(cfg.out.resolve()), "run_dir": str(run_dir.resolve()),
                  "target": str(cfg.target_path.resolve())},
    }
    manifest["content_hash"] = manifest_hash(manifest)
    write_json(manifest, run_dir / "manifest.json")
    return manifest


def cmd_unlearn(cfg: ExperimentConfig, method: str | None = None, out_dir=None) -> dict:
    pipeline = resolve_pipeline(cfg, method)
    run_dir = Path(out_dir) if out_dir is not None else cfg.out / "runs" / pipeline.name
    return run_unlearning(cfg, pipeline, run_dir)


def load_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise MissingArtifactError(f"manifest {p} not found")
    m = json.loads(p.read_text(encoding="utf-8"))
    if m.get("kind") not in (MANIFEST_KIND, EVAL_KIND):
        raise ConfigError(f"{p} is not a run manifest")
    if m.get("artifact_version") != __version__:
        raise ConfigError(f"{p} was written by artifact version {m.get('artifact_version')}, "
                          f"this is {__version__}")
    return m


def verify_manifest(manifest: dict, run_dir) -> list[str]:
    """Recompute every checkpoint hash listed in a manifest; returns the mismatches."""
    bad = []
    for s in manifest["stages"]:
        p = Path(run_dir) / s["checkpoint"]
        if not p.exists() or file_sha256(p) != s["sha256"]:
            bad.append(s["checkpoint"])
    if manifest_hash(manifest) != manifest.get("content_hash"):
        bad.append("manifest.json")
    return bad


def replay_manifest(manifest_path, out_dir, output_dir=None) -> dict:
    """Re-run a recorded run from its manifest alone (plus its input artifacts).

    ``output_dir`` locates the dataset and target checkpoint; by default the
    location recorded in the manifest. Input hashes are checked before running.
    """
    m = load_manifest(manifest_path)
    cfg = config_from_dict(dict(m["config"], output_dir=output_dir or m["paths"]["output_dir"]))
    _require(cfg.target_path, "target checkpoint", "memorize")
    if file_sha256(cfg.target_path) != m["inputs"]["target_sha256"]:
        raise ConfigError(f"target checkpoint {cfg.target_path} does not match the manifest's hash")
    return run_unlearning(cfg, cfg.pipeline, Path(out_dir))


def load_final_lm(manifest: dict, run_dir):
    """Rebuild the final model of a run (a composed LM for logits difference)."""
    final_path = Path(run_dir) / manifest["final"]["checkpoint"]
    model, _ = checkpoint_load(final_path)
    if manifest["final"].get("composed"):
        target, _ = checkpoint_load(manifest["paths"]["target"])
        scale = manifest["config"]["pipeline"]["stages"][-1]["scale"]
        return LogitsDiffLM(target, model, scale)
    return model


def cmd_eval(cfg: ExperimentConfig, checkpoint=None, label: str | None = None, method: str | None = None,
             out_dir=None) -> dict:
    """Score a checkpoint (default: the target) or the final model of run ``method``."""
    ds = load_data(cfg)
    if method is not None:
        run_dir = cfg.out / "runs" / method
        m = load_manifest(run_dir)
        lm = load_final_lm(m, run_dir)
        sha = m["final"]["sha256"]
        label = label or method
    else:
        path = Path(checkpoint) if checkpoint is not None else cfg.target_path
        _require(path, "checkpoint", "memorize")
        lm, _ = checkpoint_load(path)
        sha = file_sha256(path)
        label = label or ("original" if checkpoint is None else path.stem)
    t0 = time.perf_counter()
    report = evaluate(lm, ds, cfg.eval)
    doc = {"kind": EVAL_KIND, "artifact_version": __version__, "method": label, "checkpoint_sha256": sha,
           "eval": cfg.eval.__dict__.copy(), "dataset": dataset_fingerprint(cfg.data_dir),
           "report": report.to_dict(), "wall_clock": {"total_seconds": time.perf_counter() - t0}}
    doc["content_hash"] = manifest_hash(doc)
    dest = Path(out_dir) if out_dir is not None else cfg.out / "evals"
    write_json(doc, dest / f"{label}.json")
    return doc


# --------------------------------------------------------------------------- reports


def report_rows(manifests) -> list[dict]:
    rows = []
    for m in manifests:
        if m.get("report") is None:
            raise ConfigError(f"run {m.get('method')!r} has no evaluation; enable eval.after_unlearn")
        rows.append(ScoreReport.from_dict(m["report"]).row(m["method"]))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r["Method"]] + [repr(float(r[c])) for c in COLUMNS[1:]])
    return buf.getvalue()


def csv_to_rows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    return [{"Method": r["Method"], **{c: float(r[c]) for c in COLUMNS[1:]}} for r in reader]


def cmd_report(cfg: ExperimentConfig, manifest_paths=(), out_dir=None) -> tuple[str, str]:
    """Comparison table (text, CSV) over evaluation documents and run manifests.

    With no explicit paths: every ``evals/*.json`` then every ``runs/*/manifest.json``.
    """
    paths = [Path(p) for p in manifest_paths]
    if not paths:
        paths = sorted((cfg.out / "evals").glob("*.json")) + sorted((cfg.out / "runs").glob("*/manifest.json"))
    if not paths:
        raise MissingArtifactError(f"no manifests found under {cfg.out}")
    rows = report_rows([load_manifest(p) for p in paths])
    text, table_csv = format_table(rows), rows_to_csv(rows)
    dest = Path(out_dir) if out_dir is not None else cfg.out
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "report.txt").write_text(text + "\n", encoding="utf-8")
    (dest / "report.csv").write_text(table_csv, encoding="utf-8")
    return text, table_csv


# --------------------------------------------------------------------------- sweeps


def grid_points(sweep: dict) -> list[dict]:
    axes = [a for a in SWEEP_AXES if a in sweep]
    return [dict(zip(axes, combo)) for combo in itertools.product(*(sweep[a] for a in axes))]


def point_id(point: dict) -> str:
    return "_".join(f"{k}={_fmt(v)}" for k, v in point.items()) or "default"


def apply_point(pipeline: PipelineSpec, point: dict) -> PipelineSpec:
    """Override every trained stage's settings with one grid point.

    ``lr``/``weight_decay``/``epochs`` apply to each stage's main train config
    (the ascent half of GDiff, the assistant fine-tune of LogitsDiff);
    ``alpha`` to ControlledGA stages and ``kl_weight`` to KLMin stages.
    """
    train_over = {k: v for k, v in point.items() if k in ("lr", "weight_decay", "epochs")}
    stages = []
    for s in pipeline.stages:
        if s.train is not None and train_over:
            s = s.with_train(**train_over)
        if s.kind == "ControlledGA" and "alpha" in point:
            s = replace(s, alpha=float(point["alpha"]))
        if s.kind == "KLMin" and "kl_weight" in point:
            s = replace(s, kl_weight=float(point["kl_weight"]))
        stages.append(s)
    return PipelineSpec(tuple(stages), f"{pipeline.name}[{point_id(point)}]", pipeline.reference_row)


def _sweep_one(cfg_dict: dict, pipeline_dict: dict, run_dir: str) -> dict:
    """One isolated grid point (importable for process pools)."""
    cfg = config_from_dict(cfg_dict)
    try:
        m = run_unlearning(cfg, PipelineSpec.from_dict(pipeline_dict), Path(run_dir))
        rep = m["report"]
        return {"status": "ok", "content_hash": m["content_hash"],
                "final_aggregate": rep["final_aggregate"] if rep else None}
    except Exception as e:  # a failed grid point is recorded, the sweep goes on
        log.warning("sweep point %s failed: %s", run_dir, e)
        return {"status": "failed", "error": type(e).__name__, "message": str(e)}


def cmd_sweep(cfg: ExperimentConfig, method: str | None = None, out_dir=None, jobs: int = 1) -> dict:
    """Run every grid point as an independent run and rank them by final aggregate."""
    base_pipeline = resolve_pipeline(cfg, method)
    points = grid_points(cfg.sweep)
    if not points:
        raise ConfigError("sweep grid is empty; add a 'sweep' section")
    sweep_dir = Path(out_dir) if out_dir is not None else cfg.out / "sweeps" / base_pipeline.name
    _require(cfg.target_path, "target checkpoint", "memorize")
    cfg_dict = cfg.to_dict()
    cfg_dict["output_dir"] = str(cfg.out.resolve())
    jobs_args = [(cfg_dict, apply_point(base_pipeline, p).to_dict(), str(sweep_dir / point_id(p))) for p in points]
    if jobs > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_sweep_one, *zip(*jobs_args)))
    else:
        results = [_sweep_one(*a) for a in jobs_args]
    entries = [{"run_id": point_id(p), "point": p, **r} for p, r in zip(points, results)]
    ok = [e for e in entries if e["status"] == "ok" and e["final_aggregate"] is not None]
    ranked = sorted(ok, key=lambda e: (-e["final_aggregate"], e["run_id"]))
    leaderboard = {
        "kind": "ulwb-sweep", "artifact_version": __version__, "method": base_pipeline.name,
        "grid": cfg.sweep, "leaderboard": ranked,
        "failures": [e for e in entries if e["status"] != "ok"],
        "runs": entries,
    }
    leaderboard["content_hash"] = manifest_hash(leaderboard)
    write_json(leaderboard, sweep_dir / "leaderboard.json")
    rows = [ScoreReport.from_dict(load_manifest(sweep_dir / e["run_id"])["report"]).row(e["run_id"]) for e in ranked]
    (sweep_dir / "leaderboard.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (sweep_dir / "leaderboard.txt").write_text(format_table(rows) + "\n", encoding="utf-8")
    return leaderboard
