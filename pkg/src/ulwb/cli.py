"""``ulwb`` command line: dataset generation, training, unlearning, evaluation, reports, sweeps.

Exit codes: 0 success, 2 invalid configuration or missing inputs, 3 divergence guard.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .datagen import InfeasibleSpecError, JsonlError
from .experiment import (
    ConfigError,
    ExperimentConfig,
    MissingArtifactError,
    cmd_datagen,
    cmd_eval,
    cmd_memorize,
    cmd_pretrain,
    cmd_report,
    cmd_sweep,
    cmd_unlearn,
    config_from_dict,
    load_config,
    replay_manifest,
)
from .lm_core import CheckpointError, DivergenceError
from .unlearn import IncompatibleTokenizerError, UnknownComponentError

EXIT_OK, EXIT_ERROR, EXIT_VALIDATION, EXIT_DIVERGENCE = 0, 1, 2, 3

COMMANDS = ("datagen", "pretrain", "memorize", "unlearn", "eval", "report", "sweep")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ulwb", description="Desk-scale LLM unlearning workbench.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML experiment config (or a run manifest.json for replay)")
    p.add_argument("--method", help="method or pipeline preset id (unlearn/eval/sweep)")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--seed", type=int, help="global seed; overrides every seed in the config")
    p.add_argument("--scale", type=float, help="datagen: multiply every corpus count by this factor")
    p.add_argument("--checkpoint", help="eval: checkpoint to score (default: the target model)")
    p.add_argument("--label", help="eval: row label in reports")
    p.add_argument("--replay", action="store_true",
                   help="unlearn: treat --config as a manifest and re-run it into --out")
    p.add_argument("--jobs", type=int, default=1, help="sweep: concurrent grid points")
    p.add_argument("manifests", nargs="*", help="report: manifests or evaluation files to tabulate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> ExperimentConfig:
    if args.config is None:
        if args.command == "datagen":
            return config_from_dict({}, args.seed)
        raise ConfigError(f"`ulwb {args.command}` needs --config PATH")
    return load_config(args.config, args.seed)


def run(args) -> int:
    if args.command == "unlearn" and args.replay:
        if not args.config or not args.out:
            raise ConfigError("--replay needs --config MANIFEST and --out DIR")
        m = replay_manifest(args.config, args.out)
        print(f"replayed {m['method']}: final sha256 {m['final']['sha256']}")
        return EXIT_OK

    cfg = _config(args)
    if args.command == "datagen":
        paths = cmd_datagen(cfg, args.out, args.scale)
        print(f"wrote {len(paths)} dataset files to {Path(paths['pretrain']).parent}")
        return EXIT_OK
    if args.out and args.command in ("pretrain", "memorize"):
        cfg.output_dir = args.out
    if args.command == "pretrain":
        print(f"base checkpoint: {cmd_pretrain(cfg)}")
    elif args.command == "memorize":
        print(f"target checkpoint: {cmd_memorize(cfg)}")
    elif args.command == "unlearn":
        m = cmd_unlearn(cfg, args.method, args.out)
        print(f"{m['method']}: {len(m['stages'])} stage(s), final sha256 {m['final']['sha256']}")
        for s in m["stages"]:
            print(f"  stage {s['index']}: {s['summary']}")
        if m["report"] is not None:
            print(f"  final aggregate {m['report']['final_aggregate']:.4f}")
    elif args.command == "eval":
        doc = cmd_eval(cfg, args.checkpoint, args.label, args.method, args.out)
        print(json.dumps({k: v for k, v in doc["report"].items() if k != "extras"}, indent=2, sort_keys=True))
    elif args.command == "report":
        text, _ = cmd_report(cfg, args.manifests, args.out)
        print(text)
    elif args.command == "sweep":
        lb = cmd_sweep(cfg, args.method, args.out, args.jobs)
        for rank, e in enumerate(lb["leaderboard"], 1):
            print(f"{rank:3d}  {e['final_aggregate']:.4f}  {e['run_id']}")
        for e in lb["failures"]:
            print(f"  failed {e['run_id']}: {e['error']}: {e['message']}")
    return EXIT_OK


VALIDATION_ERRORS = (ConfigError, MissingArtifactError, FileNotFoundError, CheckpointError, JsonlError,
                     InfeasibleSpecError, IncompatibleTokenizerError, UnknownComponentError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except DivergenceError as e:
        print(f"ulwb: divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except VALIDATION_ERRORS as e:
        print(f"ulwb: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
