"""Command-line front end for the batch pipeline.

Usage shape: ``lesionkit [--config FILE] [--set key=value ...] [path flags]
<stage> [variant]``. Flags override config-file values; the output root can
also come from the LESIONKIT_OUTPUT environment variable. Stages exit 0 on
success and nonzero with a named-stage diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .pipeline import StageError

_PATH_FLAGS = (
    "images",
    "masks",
    "superpixels",
    "annotations",
    "truth",
    "manifest",
    "manifest_dr",
    "manifest_dm",
    "predictions",
    "checkpoint",
    "checkpoint_dr",
    "checkpoint_dm",
    "output",
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lesionkit",
        description="Batch pipeline: preprocessing, augmentation, superpixels, "
        "training, inference, evaluation, and renderings.",
    )
    ap.add_argument("--config", help="key = value settings file")
    ap.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config setting (repeatable)",
    )
    for name in _PATH_FLAGS:
        ap.add_argument(f"--{name.replace('_', '-')}", dest=name, help=f"path setting {name!r}")
    ap.add_argument("--seed", type=int, help="root seed for every stochastic stage")

    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", help="normalize raw images and masks")
    p = sub.add_parser("augment", help="expand a dataset manifest")
    p.add_argument("kind", choices=("lesion", "patch"))
    sub.add_parser("superpixel", help="write superpixel label maps")
    p = sub.add_parser("train", help="train a network")
    p.add_argument("network", choices=("lfn", "lin"))
    p = sub.add_parser("infer", help="run trained networks")
    p.add_argument("product", choices=("segment", "classify", "features"))
    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("task", choices=("task1", "task2", "task3"))
    p = sub.add_parser("render", help="write inspection images")
    p.add_argument("what", choices=("overlay", "distance-heatmap"))
    return ap


def _collect_settings(args: argparse.Namespace) -> dict[str, str]:
    """Config-file values overlaid with --set pairs and dedicated flags."""
    problems: list[str] = []
    values: dict[str, str] = {}
    if args.config:
        try:
            text = open(args.config).read()
        except OSError as e:
            raise StageError("config", [f"cannot read {args.config}: {e}"])
        values, parse_problems = pipeline.parse_config_text(text)
        problems.extend(parse_problems)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            problems.append(f"--set needs KEY=VALUE, got {item!r}")
            continue
        values[key.strip()] = value.strip()
    for name in _PATH_FLAGS:
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if problems:
        raise StageError("config", problems)
    return values


def _dispatch(args: argparse.Namespace, cfg: pipeline.PipelineConfig) -> dict:
    if args.command == "preprocess":
        return pipeline.cmd_preprocess(cfg)
    if args.command == "augment":
        return pipeline.cmd_augment(cfg, args.kind)
    if args.command == "superpixel":
        return pipeline.cmd_superpixel(cfg)
    if args.command == "train":
        if args.network == "lfn":
            return pipeline.cmd_train_lfn(cfg)
        return pipeline.cmd_train_lin(cfg)
    if args.command == "infer":
        if args.product == "segment":
            return pipeline.cmd_infer_segment(cfg)
        if args.product == "classify":
            return pipeline.cmd_infer_classify(cfg)
        return pipeline.cmd_infer_features(cfg)
    if args.command == "evaluate":
        if args.task == "task1":
            return pipeline.cmd_evaluate_task1(cfg)
        return pipeline.cmd_evaluate_classification(cfg, args.task)
    if args.what == "overlay":
        return pipeline.cmd_render_overlay(cfg)
    return pipeline.cmd_render_distance(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.build_config(_collect_settings(args))
        manifest = _dispatch(args, cfg)
    except StageError as e:
        print(f"error in stage {e.stage}:", file=sys.stderr)
        for problem in e.problems:
            print(f"  {problem}", file=sys.stderr)
        return 2
    print(f"{manifest['stage']}: {len(manifest['outputs'])} files")
    for rel in manifest["outputs"]:
        print(f"  {rel}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
