#!/usr/bin/env python
"""
Command-line interface: ``seld <command>``.

Every command reads a run config (``--config``, a YAML path or a preset
name), applies the flag overrides, and exits 1 with a one-line diagnostic on
a bad config key, a missing file or a shape mismatch.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import soundfile as sf
from pydantic import ValidationError

from seld_einv2 import __version__
from seld_einv2.data.dataset import STATS_PATH, SeldDataset
from seld_einv2.data.labels import FoaClip, read_label_csv, write_label_csv
from seld_einv2.data.scene import synth_scene
from seld_einv2.data.segment import segment_clips
from seld_einv2.diffcore.checkpoint import load_checkpoint
from seld_einv2.errors import FormatError, SeldError
from seld_einv2.features import FeatureStats, featurize_clip
from seld_einv2.gradsuite import format_grad_results, run_grad_suite
from seld_einv2.metrics import format_scores, seld_scores, write_metrics_report
from seld_einv2.model.decode import decode
from seld_einv2.model.einv2 import EINV2, einv2_forward
from seld_einv2.progress_reporter import reset_progress_reporter
from seld_einv2.run_config import RunConfig, config_hash, load_run_config, override_run_config
from seld_einv2.trainer.loop import CONFIG_NAME, check_hash, evaluate_checkpoint, model_entries, train_loop
from seld_einv2.trainer.sweep import load_sweep_config, run_sweep

logger = logging.getLogger("seld_einv2")


def _overrides(args) -> Dict[str, object]:
    updates: Dict[str, object] = {}
    if getattr(args, "data_root", None):
        updates["dataset.root"] = args.data_root
    if getattr(args, "format", None):
        updates["model.output_format"] = args.format
    if getattr(args, "ps_mode", None):
        updates["model.ps_mode"] = args.ps_mode
    if getattr(args, "loss", None):
        updates["loss.method"] = args.loss
    if getattr(args, "task", None):
        updates["loss.task"] = args.task
    if getattr(args, "run_dir", None):
        updates["train.run_dir"] = args.run_dir
    if getattr(args, "epoch_scale", None) is not None:
        updates["train.epoch_scale"] = args.epoch_scale
    if getattr(args, "max_steps", None) is not None:
        updates["train.max_steps"] = args.max_steps
    if getattr(args, "trials", None) is not None:
        updates["train.n_trials"] = args.trials
    if getattr(args, "split", None):
        updates["eval.split"] = args.split
    if getattr(args, "oracle_sed", False):
        updates["eval.oracle"] = "sed"
    if getattr(args, "oracle_doa", False):
        updates["eval.oracle"] = "doa"
    return updates


def resolve_config(args, config_path: Optional[str] = None) -> RunConfig:
    """Run config from --config (or ``config_path``) with flag overrides applied."""
    config = load_run_config(getattr(args, "config", None) or config_path)
    updates = _overrides(args)
    if getattr(args, "seed", None) is not None:
        updates["dataset.seed" if args.command == "synth" else "train.seed"] = args.seed
    return override_run_config(config, updates) if updates else config


def _checkpoint_config(args) -> RunConfig:
    # a run directory's frozen config wins when no --config is given
    sibling = Path(args.checkpoint).parent / CONFIG_NAME
    return resolve_config(args, str(sibling) if sibling.exists() and not args.config else None)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    config = resolve_config(args)
    progress = reset_progress_reporter(quiet=args.quiet)
    out_dir = args.out or config.dataset.root
    progress.run_started("Synthesizing dataset", f"{config.dataset.n_clips} clips -> {out_dir}")
    splits = synth_scene(config.dataset, config.features, out_dir, progress)
    for split, clip_ids in splits.items():
        print(f"{split}: {len(clip_ids)} clips")
    return 0


def cmd_featurize(args) -> int:
    config = resolve_config(args)
    root = args.dataset_dir or config.dataset.root
    progress = reset_progress_reporter(quiet=args.quiet)
    progress.run_started("Building feature cache", str(root))
    dataset = SeldDataset(root, config)
    stats = dataset.featurize(progress)
    print(f"Feature statistics over {len(stats.mean)} log-mel channels written to {dataset.stats_path}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    progress = reset_progress_reporter(config.train.total_epochs, quiet=args.quiet)
    results = train_loop(config, progress=progress, resume=args.resume)
    for result in results:
        print(f"\n{result.run_dir}")
        print("  best: " + ", ".join(f"{k} {v:.3f}" for k, v in result.best.items() if k != "epoch"))
        print("  last: " + ", ".join(f"{k} {v:.3f}" for k, v in result.last.items()))
    return 0


def cmd_eval(args) -> int:
    if args.pred or args.ref:
        if not (args.pred and args.ref):
            raise FormatError("--pred and --ref must be given together")
        config = resolve_config(args)
        scores = seld_scores(
            read_label_csv(args.pred, predictions=True),
            read_label_csv(args.ref),
            config.eval.doa_threshold,
            config.features.label_hop if args.frame_mode else config.eval.segment_seconds,
            config.features.label_hop,
        )
    else:
        if not args.checkpoint:
            raise FormatError("eval needs a checkpoint or --pred/--ref")
        config = _checkpoint_config(args)
        if args.frame_mode:
            config = override_run_config(config, {"eval.segment_seconds": config.features.label_hop})
        scores = evaluate_checkpoint(args.checkpoint, config)
    print(format_scores(scores))
    if args.out:
        write_metrics_report(args.out, scores)
    return 0


def infer_file(model: EINV2, wav: Path, config: RunConfig, stats: FeatureStats) -> List:
    """Prediction rows for a FOA WAV file of any length, on the clip's frame grid."""
    audio, sample_rate = sf.read(str(wav), dtype="float64", always_2d=True)
    if sample_rate != config.features.sample_rate:
        raise FormatError(f"{wav}: sample rate {sample_rate} differs from configured {config.features.sample_rate}")
    clip = FoaClip(clip_id=wav.stem, audio=audio.T, sample_rate=sample_rate, label_hop=config.features.label_hop)
    frames = config.features.labels_per_segment
    rows = []
    for segment in segment_clips(clip, config.features.segment_seconds):
        prediction = einv2_forward(model, featurize_clip(segment, config.features, stats))
        rows.extend(decode(prediction, config.eval.threshold, segment.segment * frames))
    return [row for row in rows if row.frame < clip.n_label_frames]


def cmd_infer(args) -> int:
    config = _checkpoint_config(args)
    entries, stored_hash, _ = load_checkpoint(args.checkpoint)
    check_hash(stored_hash, config_hash(config.model), Path(args.checkpoint))
    model = EINV2(config.model)
    model.load_state_dict(model_entries(entries))
    model.eval()
    stats_path = Path(args.stats) if args.stats else Path(config.dataset.root) / STATS_PATH
    stats = FeatureStats.load(stats_path)

    for wav in args.wav:
        wav = Path(wav)
        if not wav.exists():
            raise FileNotFoundError(f"Audio file not found: {wav}")
        rows = infer_file(model, wav, config, stats)
        out = Path(args.out_dir) / f"{wav.stem}.csv" if args.out_dir else wav.with_suffix(".csv")
        write_label_csv(out, rows)
        print(f"{wav}: {len(rows)} events -> {out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_grad_suite(seed=args.seed or 0, n_coords=args.coords)
    print(format_grad_results(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"Error: gradient check failed for {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    sweep = load_sweep_config(args.sweep_file)
    progress = reset_progress_reporter(quiet=args.quiet)
    report = run_sweep(sweep, progress)
    print(report.read_text(encoding="utf-8"))
    print(f"Report written to {report}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seld",
        description="EINV2 sound event localization and detection on first-order ambisonics",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s synth --config tiny --seed 7       # Generate the tiny synthetic dataset
  %(prog)s featurize --config tiny            # Build the feature cache and statistics
  %(prog)s train --config tiny --loss cpit    # Train (run dir from the config)
  %(prog)s eval runs/tiny/ckpt_best           # Score a checkpoint on the test split
  %(prog)s eval --pred p.csv --ref r.csv      # Score two label files
  %(prog)s infer runs/tiny/ckpt_best a.wav    # Write a.csv with predicted events
  %(prog)s gradcheck                          # Finite-difference gradient suite
  %(prog)s sweep                              # ps_mode x output format ablation
        """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=str, default=None,
                        help="Run config YAML or preset name (default, tiny)")
    common.add_argument("--seed", type=int, default=None, help="Override the seed")
    common.add_argument("--data-root", type=str, default=None, help="Dataset root (default: config / SELD_DATA_ROOT)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="No progress output")

    model_flags = argparse.ArgumentParser(add_help=False)
    model_flags.add_argument("--format", choices=["trackwise", "seldnet"], default=None, help="Output format")
    model_flags.add_argument("--ps-mode", choices=["none", "hard", "soft"], default=None, help="Parameter sharing")
    model_flags.add_argument("--loss", choices=["tpit", "cpit", "fixed"], default=None, help="Track assignment")

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic FOA dataset")
    p.add_argument("--out", type=str, default=None, help="Output directory (default: dataset.root)")

    p = sub.add_parser("featurize", parents=[common], help="Build the feature cache and statistics")
    p.add_argument("dataset_dir", nargs="?", default=None, help="Dataset root (default: dataset.root)")

    p = sub.add_parser("train", parents=[common, model_flags], help="Train EINV2")
    p.add_argument("--task", choices=["joint", "sed", "doa"], default=None, help="Train one branch only")
    p.add_argument("--run-dir", type=str, default=None, help="Run directory (default: train.run_dir)")
    p.add_argument("--epoch-scale", type=float, default=None, help="Scale the 90 + 10 epoch schedule")
    p.add_argument("--max-steps", type=int, default=None, help="Stop after this many optimizer steps")
    p.add_argument("--trials", type=int, default=None, help="Number of trials to average")
    p.add_argument("--resume", action="store_true", help="Continue from ckpt_last in the run directory")

    p = sub.add_parser("eval", parents=[common], help="Score a checkpoint or two label files")
    p.add_argument("checkpoint", nargs="?", default=None, help="ckpt_best or ckpt_last")
    p.add_argument("--split", type=str, default=None, help="Dataset split (default: eval.split)")
    p.add_argument("--pred", type=str, default=None, help="Prediction CSV")
    p.add_argument("--ref", type=str, default=None, help="Reference CSV")
    p.add_argument("--oracle-sed", action="store_true", help="Use reference activity (DoA-only scoring)")
    p.add_argument("--oracle-doa", action="store_true", help="Use reference directions (SED-only scoring)")
    p.add_argument("--frame-mode", action="store_true", help="Score per label frame instead of per 1 s segment")
    p.add_argument("--out", type=str, default=None, help="Write a metrics report file")

    p = sub.add_parser("infer", parents=[common], help="Predict events for WAV files")
    p.add_argument("checkpoint", help="ckpt_best or ckpt_last")
    p.add_argument("wav", nargs="+", help="4-channel FOA WAV file(s)")
    p.add_argument("--stats", type=str, default=None, help="Feature statistics file")
    p.add_argument("--out-dir", type=str, default=None, help="Directory for prediction CSVs (default: next to WAV)")

    p = sub.add_parser("gradcheck", parents=[common], help="Run the gradient suite")
    p.add_argument("--coords", type=int, default=12, help="Coordinates sampled per component check")

    p = sub.add_parser("sweep", parents=[common], help="Run the ablation sweep")
    p.add_argument("sweep_file", nargs="?", default=None, help="Sweep YAML (default: shipped sweep preset)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "oracle_sed", False) and getattr(args, "oracle_doa", False):
        parser.error("--oracle-sed and --oracle-doa are mutually exclusive")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SeldError, FileNotFoundError, ValidationError, ValueError) as e:
        print(f"Error: {_one_line(e)}", file=sys.stderr)
        return 1


def _one_line(error: Exception) -> str:
    return " ".join(str(error).split())


def run():
    """
    Console entry point.
    """
    sys.exit(main())


if __name__ == "__main__":
    run()
