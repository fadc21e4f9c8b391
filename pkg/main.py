import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import torch

from config.settings import Settings, load_settings
from evaluation.report import build_report
from evaluation.visualize import emit_tsne_plot
from models.multitask import MultitaskModel
from scoring.pipeline import ScorerState, extract_features, fit_scorer, run_model, score_entries, write_scores
from signal_frontend.manifest import (
    MANIFEST_FILENAME,
    DatasetManifest,
    Split,
    holdout_test_normals,
    load_manifest,
)
from signal_frontend.synth import synth_corpus
from training.checkpoint import load_checkpoint, typed_checkpoint_path, update_checkpoint
from training.data import WaveformFeatureSource
from training.trainer import Trainer
from utils.errors import AsdError, CheckpointError, ManifestError
from utils.logger import setup_logger

logger = logging.getLogger(__name__)

DEFAULT_CHECKPOINT = "models/asd.pt"


# ----------------------------------------------------------------------
# Shared helpers
# ----------------------------------------------------------------------

def _manifest(args: argparse.Namespace, settings: Settings, attr: str = "manifest") -> DatasetManifest:
    """Load a manifest; a CSV file or a directory holding manifest.csv defaults to flat_csv."""
    source = Path(getattr(args, attr))
    layout = getattr(args, "layout", None)
    if layout is None:
        is_csv = source.is_file() or (source / MANIFEST_FILENAME).exists()
        layout = "flat_csv" if is_csv else settings.manifest_layout
    manifest = load_manifest(source, layout=layout)
    if getattr(args, "holdout", False):
        manifest = holdout_test_normals(manifest)
    return manifest


def _target_types(args: argparse.Namespace, manifest: DatasetManifest) -> List[str]:
    available = manifest.machine_types()
    wanted = getattr(args, "machine_type", None) or available
    unknown = sorted(set(wanted) - set(available))
    if unknown:
        raise ManifestError(f"Machine types {unknown} not in manifest (available: {available})")
    return list(wanted)


def _load_model(checkpoint: Path):
    payload = load_checkpoint(checkpoint)
    return payload, MultitaskModel.from_checkpoint(payload["model"])


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    manifest = synth_corpus(settings.synthesis(), settings.seed, args.out, settings.frontend())
    print(f"Wrote {len(manifest)} clips to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    manifest = _manifest(args, settings)
    for machine_type in _target_types(args, manifest):
        checkpoint = typed_checkpoint_path(args.checkpoint, machine_type)
        loss_log = checkpoint.with_name(f"{checkpoint.stem}_loss.csv")
        cfg = settings.train(machine_type)
        source = WaveformFeatureSource.from_manifest(
            manifest,
            machine_type,
            frontend=settings.frontend(),
            aug_cfg=settings.augmentation(),
            max_workers=settings.num_workers,
            cache_size=settings.audio_cache_size,
        )

        resume = args.resume or args.stage == "2"
        if resume:
            payload, model = _load_model(checkpoint)
            stage, epoch = payload.get("stage", 0), payload.get("epoch", 0)
            if args.stage == "2" and (stage < 1 or (stage == 1 and epoch < cfg.stage1_epochs)):
                raise CheckpointError(f"{checkpoint} holds no completed stage-1 model")
            if args.stage == "1" and stage == 2:
                raise CheckpointError(f"{checkpoint} is already past stage 1")
            trainer = Trainer(model, source, cfg, checkpoint, loss_log, resume_from=payload)
        else:
            torch.manual_seed(settings.seed)
            machine_ids = manifest.machine_ids(machine_type, split=Split.TRAIN)
            model = MultitaskModel(machine_type, machine_ids, settings.encoder(), settings.heads())
            trainer = Trainer(model, source, cfg, checkpoint, loss_log)

        if args.stage == "1":
            trainer.run_stage(1)
        elif args.stage == "2":
            trainer.run_stage(2)
        else:
            trainer.fit()
        print(f"Trained '{machine_type}' -> {checkpoint}")
    return 0


def cmd_fit_stats(args: argparse.Namespace, settings: Settings) -> int:
    manifest = _manifest(args, settings)
    validation = None
    if args.validation_manifest:
        validation = _manifest(args, settings, attr="validation_manifest")
    for machine_type in _target_types(args, manifest):
        checkpoint = typed_checkpoint_path(args.checkpoint, machine_type)
        payload, model = _load_model(checkpoint)
        if not payload.get("complete", False):
            logger.warning(f"{checkpoint} is not a completed two-stage model")
        scorer = fit_scorer(
            model, manifest, settings.frontend(), settings.scorer(), validation, settings.num_workers
        )
        update_checkpoint(checkpoint, scorer=scorer.to_checkpoint())
        print(f"Fitted scorer for '{machine_type}' ({'+'.join(scorer.combination.kinds)}) -> {checkpoint}")
    return 0


def cmd_score(args: argparse.Namespace, settings: Settings) -> int:
    manifest = _manifest(args, settings)
    split = None if args.split == "all" else Split(args.split)
    frames = []
    for machine_type in _target_types(args, manifest):
        entries = manifest.select(machine_type=machine_type, split=split)
        if not entries:
            continue
        payload, model = _load_model(typed_checkpoint_path(args.checkpoint, machine_type))
        scorer = ScorerState.from_checkpoint(payload.get("scorer"))
        frames.append(score_entries(model, scorer, manifest, entries, settings.frontend(), settings.num_workers))
    if not frames:
        raise ManifestError("No clips to score")
    scores = pd.concat(frames, ignore_index=True).sort_values("path", kind="stable")
    write_scores(scores, args.out)
    print(f"Scored {len(scores)} clips -> {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    report = build_report(args.scores, _manifest(args, settings))
    print(report.render())
    if args.out:
        report.to_csv(args.out)
    return 0


def cmd_viz(args: argparse.Namespace, settings: Settings) -> int:
    manifest = _manifest(args, settings)
    split = None if args.split == "all" else Split(args.split)
    embeddings, types, ids, anomalous = [], [], [], []
    for machine_type in _target_types(args, manifest):
        entries = manifest.select(machine_type=machine_type, split=split)
        if not entries:
            continue
        _, model = _load_model(typed_checkpoint_path(args.checkpoint, machine_type))
        outputs = run_model(model, extract_features(manifest, entries, settings.frontend(), settings.num_workers))
        embeddings.append(outputs.embeddings)
        types += [e.machine_type for e in entries]
        ids += [e.machine_id for e in entries]
        anomalous += [e.is_anomalous for e in entries]
    if not embeddings:
        raise ManifestError("No clips to visualize")
    result = emit_tsne_plot(np.concatenate(embeddings), types, ids, anomalous, args.out, settings.tsne())
    print(f"t-SNE plot -> {result.path}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "fit-stats": cmd_fit_stats,
    "score": cmd_score,
    "eval": cmd_eval,
    "viz": cmd_viz,
}


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------

def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key=value config file (e.g. config/toy.env)")
    parser.add_argument("--seed", type=int, default=default, help="Override the configured seed")
    parser.add_argument(
        "--checkpoint",
        default=argparse.SUPPRESS if suppress else DEFAULT_CHECKPOINT,
        help="Checkpoint path; one file per machine type is derived from it",
    )


def _manifest_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="Dataset root or manifest CSV")
    parser.add_argument("--layout", choices=["mimii", "dcase", "flat_csv"], default=None)
    parser.add_argument("--holdout", action="store_true",
                        help="Move training normals into test to balance anomalies (mimii layout)")
    parser.add_argument("--type", dest="machine_type", action="append",
                        help="Restrict to a machine type (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multitask anomalous sound detection")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Write a synthetic machine-sound corpus")
    synth.add_argument("--out", required=True, help="Output directory")

    train = sub.add_parser("train", help="Two-stage training, one model per machine type")
    _manifest_flags(train)
    train.add_argument("--stage", choices=["1", "2", "both"], default="both")
    train.add_argument("--resume", action="store_true", help="Continue from the per-epoch checkpoint")

    fit = sub.add_parser("fit-stats", help="Fit normal statistics, standardization and combination")
    _manifest_flags(fit)
    fit.add_argument("--validation-manifest", default=None, help="Labeled clips for combination selection")

    score = sub.add_parser("score", help="Write the score CSV")
    _manifest_flags(score)
    score.add_argument("--out", required=True, help="Score CSV path")
    score.add_argument("--split", choices=["train", "test", "all"], default="test")

    evaluate = sub.add_parser("eval", help="AUC report from a score CSV")
    _manifest_flags(evaluate)
    evaluate.add_argument("--scores", required=True, help="Score CSV path")
    evaluate.add_argument("--out", default=None, help="Report CSV path")

    viz = sub.add_parser("viz", help="t-SNE plot of embeddings")
    _manifest_flags(viz)
    viz.add_argument("--out", required=True, help="PNG path")
    viz.add_argument("--split", choices=["train", "test", "all"], default="test")

    for subparser in sub.choices.values():
        _global_flags(subparser, suppress=True)
    return parser


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand. Returns 0 on success, 1 on a runtime failure (one
    line "error: <ErrorClass>: <message>" on stderr), 2 on usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    try:
        overrides = {} if args.seed is None else {"seed": args.seed}
        settings = load_settings(args.config, **overrides)
        setup_logger(log_file=settings.log_file, level=settings.log_level_value)
        logger.info(f"Running '{args.command}' (seed {settings.seed})")
        return COMMANDS[args.command](args, settings)
    except (AsdError, OSError, ValueError) as e:
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
