"""Command-line interface: gen-data, train, predict, eval, pipeline.

Configuration comes from an optional key=value file plus --set overrides
(flags win). Exit codes: 1 usage/config, 2 data, 3 numeric, 4 I/O; every
failure prints a single machine-parsable line
``mapseg: error: [category] message`` to stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import synth, unet
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    AugmentSpec,
    Palette,
    build_epoch,
    decode_labels,
    load_manifest,
    load_pairs,
    load_png,
    save_png,
)
from .errors import (
    ArgumentError,
    ConfigError,
    DataError,
    FileFormatError,
    MapSegError,
    NumericError,
    ShapeError,
    StateError,
)
from .infer import predict_labels
from .metrics import (
    confusion,
    evaluation_report,
    mean_jaccard,
    micro_jaccard,
    overall_accuracy,
)
from .morpho import DEFAULT_POLICY_TEXT, denoise_labels, parse_policy
from .rng import Rng
from .train import TrainConfig, train


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# every tunable knob: key -> (parser, default)
KNOWN_KEYS = {
    "model.input_channels": (int, 3),
    "model.num_classes": (int, 11),
    "model.depth": (int, 3),
    "model.base_filters": (int, 16),
    "model.patch_size": (int, 128),
    "train.learning_rate": (float, 0.05),
    "train.momentum": (float, 0.9),
    "train.batch_size": (int, 8),
    "train.epochs": (int, 6),
    "train.eval_every": (int, 1),
    "data.patches_per_image": (int, 1),
    "data.augment_fraction": (float, 0.10),
    "data.tolerance": (int, 0),
    "infer.overlap": (int, -1),  # -1 = quarter of the tile
    "infer.batch": (int, 8),
    "post.policy": (str, DEFAULT_POLICY_TEXT),
    "gen.width": (int, 128),
    "gen.height": (int, 128),
    "gen.regions": (int, 6),
    "gen.classes": (int, 11),
    "gen.noise_stddev": (float, 8.0),
    "gen.boundary_ink": (_parse_bool, True),
    "gen.clutter_strokes": (int, 6),
    "gen.count": (int, 30),
    "gen.split": (str, "0.7,0.15,0.15"),
}


def _apply_key(cfg: dict, key: str, raw: str):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser = KNOWN_KEYS[key][0]
    try:
        cfg[key] = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_run_config(path: str | None, overrides) -> dict:
    """Defaults, then config file lines, then --set overrides."""
    cfg = {key: default for key, (_, default) in KNOWN_KEYS.items()}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, raw = line.partition("=")
                _apply_key(cfg, key.strip(), raw.strip())
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        _apply_key(cfg, key.strip(), raw.strip())
    return cfg


def _split_values(text: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad split {text!r}") from exc


def _load_palette(path: str | None) -> Palette:
    return Palette.from_file(path) if path else Palette.default()


def _model_config(cfg: dict) -> unet.UNetConfig:
    return unet.UNetConfig(
        input_channels=cfg["model.input_channels"],
        num_classes=cfg["model.num_classes"],
        depth=cfg["model.depth"],
        base_filters=cfg["model.base_filters"],
        patch_size=cfg["model.patch_size"],
    )


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["train.epochs"],
        learning_rate=cfg["train.learning_rate"],
        momentum=cfg["train.momentum"],
        batch_size=cfg["train.batch_size"],
        seed=seed,
        eval_every=cfg["train.eval_every"],
    )


def _synth_spec(cfg: dict) -> synth.SynthSpec:
    return synth.SynthSpec(
        width=cfg["gen.width"],
        height=cfg["gen.height"],
        num_regions=cfg["gen.regions"],
        num_classes=cfg["gen.classes"],
        noise_stddev=cfg["gen.noise_stddev"],
        boundary_ink=cfg["gen.boundary_ink"],
        clutter_strokes=cfg["gen.clutter_strokes"],
    )


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args.set)
    palette = _load_palette(args.palette)
    manifest = synth.generate_corpus(
        _synth_spec(cfg),
        cfg["gen.count"],
        _split_values(cfg["gen.split"]),
        args.seed,
        args.out,
        palette,
    )
    palette.to_file(os.path.join(args.out, "palette.txt"))
    parts = {p: len(manifest.partition(p)) for p in ("train", "cv", "test")}
    print(
        f"gen-data: wrote {len(manifest.entries)} samples to {args.out} "
        f"(train={parts['train']} cv={parts['cv']} test={parts['test']})"
    )
    return 0


def _default_palette_path(manifest_path: str) -> str | None:
    candidate = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "palette.txt")
    return candidate if os.path.exists(candidate) else None


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    palette = _load_palette(args.palette or _default_palette_path(args.manifest))
    manifest = load_manifest(args.manifest)
    cv_entries = manifest.partition("cv")
    if not cv_entries:
        raise DataError("manifest has no cv entries")
    cache: dict = {}
    cv_set = load_pairs(cv_entries, palette, cfg["data.tolerance"], cache)
    model = unet.build(_model_config(cfg), Rng(args.seed))

    def epoch_fn(rng):
        return build_epoch(
            manifest,
            palette,
            cfg["model.patch_size"],
            cfg["data.patches_per_image"],
            cfg["data.augment_fraction"],
            rng,
            spec=AugmentSpec(),
            tolerance=cfg["data.tolerance"],
            cache=cache,
        )

    best, report = train(model, epoch_fn, cv_set, _train_config(cfg, args.seed))
    save_checkpoint(best, args.checkpoint)
    report_path = args.report or os.path.splitext(args.checkpoint)[0] + "_report.csv"
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(
        f"train: {len(report.train_loss)} epochs, best epoch {report.best_epoch} "
        f"(cv mean_jaccard {max(report.cv_mjacc):.4f}), "
        f"checkpoint {args.checkpoint}, report {report_path}"
    )
    return 0


def cmd_predict(args) -> int:
    cfg = load_run_config(args.config, args.set)
    model = load_checkpoint(args.checkpoint)
    palette = _load_palette(args.palette)
    if len(palette) < model.config.num_classes:
        raise ConfigError(
            f"palette has {len(palette)} classes, model outputs {model.config.num_classes}"
        )
    image = load_png(args.image)
    overlap = cfg["infer.overlap"]
    probs, labels = predict_labels(
        model, image, overlap=None if overlap < 0 else overlap, batch=cfg["infer.batch"]
    )
    policy_text = args.postprocess if args.postprocess is not None else ""
    if policy_text:
        labels = denoise_labels(labels, parse_policy(policy_text))
    save_png(palette.render(labels), args.out)
    if args.probmaps:
        os.makedirs(args.probmaps, exist_ok=True)
        for c in range(probs.shape[0]):
            gray = np.clip(np.rint(probs[c] * 255.0), 0, 255).astype(np.uint8)
            name = palette.names[c] if c < len(palette) else f"class{c}"
            save_png(gray, os.path.join(args.probmaps, f"prob_{c:02d}_{name}.png"))
    print(f"predict: wrote {args.out}")
    return 0


def _label_files(path: str):
    if os.path.isdir(path):
        return sorted(
            os.path.join(path, f) for f in os.listdir(path) if f.endswith(".png")
        )
    return [path]


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.set)
    palette = _load_palette(args.palette)
    pred_files = _label_files(args.pred)
    gt_files = _label_files(args.gt)
    if len(pred_files) != len(gt_files):
        raise DataError(
            f"{len(pred_files)} prediction files vs {len(gt_files)} ground-truth files"
        )
    total = np.zeros((len(palette), len(palette)), dtype=np.int64)
    for pf, gf in zip(pred_files, gt_files):
        pred = decode_labels(load_png(pf), palette, cfg["data.tolerance"])
        gt = decode_labels(load_png(gf), palette, cfg["data.tolerance"])
        total += confusion(pred, gt, len(palette))
    report = evaluation_report(total, palette.names)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    print(
        f"eval: mean_jaccard={mean_jaccard(total):.6f} "
        f"micro_jaccard={micro_jaccard(total):.6f} "
        f"overall_accuracy={overall_accuracy(total):.6f}"
    )
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_run_config(args.config, args.set)
    os.makedirs(args.out, exist_ok=True)
    data_dir = os.path.join(args.out, "data")
    palette = _load_palette(args.palette)
    manifest = synth.generate_corpus(
        _synth_spec(cfg),
        cfg["gen.count"],
        _split_values(cfg["gen.split"]),
        args.seed,
        data_dir,
        palette,
    )
    palette.to_file(os.path.join(data_dir, "palette.txt"))
    print(f"pipeline: generated {len(manifest.entries)} samples in {data_dir}")

    cache: dict = {}
    cv_set = load_pairs(manifest.partition("cv"), palette, cfg["data.tolerance"], cache)
    model = unet.build(_model_config(cfg), Rng(args.seed))

    def epoch_fn(rng):
        return build_epoch(
            manifest,
            palette,
            cfg["model.patch_size"],
            cfg["data.patches_per_image"],
            cfg["data.augment_fraction"],
            rng,
            spec=AugmentSpec(),
            tolerance=cfg["data.tolerance"],
            cache=cache,
        )

    best, report = train(model, epoch_fn, cv_set, _train_config(cfg, args.seed))
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(best, ckpt_path)
    with open(os.path.join(args.out, "report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(
        f"pipeline: trained {len(report.train_loss)} epochs, "
        f"best epoch {report.best_epoch}, cv mean_jaccard {max(report.cv_mjacc):.4f}"
    )

    pred_dir = os.path.join(args.out, "pred")
    os.makedirs(pred_dir, exist_ok=True)
    policy = parse_policy(
        args.postprocess if args.postprocess is not None else cfg["post.policy"]
    )
    overlap = cfg["infer.overlap"]
    num_classes = best.config.num_classes
    raw_total = np.zeros((num_classes, num_classes), dtype=np.int64)
    post_total = np.zeros((num_classes, num_classes), dtype=np.int64)
    test_pairs = load_pairs(manifest.partition("test"), palette, cfg["data.tolerance"], cache)
    for entry, (image, gt) in zip(manifest.partition("test"), test_pairs):
        _, raw = predict_labels(
            best, image, overlap=None if overlap < 0 else overlap, batch=cfg["infer.batch"]
        )
        post = denoise_labels(raw, policy)
        raw_total += confusion(raw, gt, num_classes)
        post_total += confusion(post, gt, num_classes)
        out_name = os.path.splitext(os.path.basename(entry.image_path))[0]
        save_png(palette.render(post), os.path.join(pred_dir, f"{out_name}_pred.png"))

    names = palette.names[:num_classes]
    with open(os.path.join(args.out, "metrics_raw.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluation_report(raw_total, names))
    with open(os.path.join(args.out, "metrics_post.csv"), "w", encoding="utf-8") as fh:
        fh.write(evaluation_report(post_total, names))
    print(
        f"pipeline: test mean_jaccard raw={mean_jaccard(raw_total):.6f} "
        f"post={mean_jaccard(post_total):.6f}"
    )
    print(
        f"pipeline: test overall_accuracy raw={overall_accuracy(raw_total):.6f} "
        f"post={overall_accuracy(post_total):.6f}"
    )
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse, but usage failures exit 1 with the standard error line."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"mapseg: error: [usage] {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, default=0, help="64-bit run seed")
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="worker cap; this implementation always runs serially (1 = reference)",
    )
    p.add_argument("--palette", help="palette file (default: built-in 11 classes)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mapseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a manifest")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--report", help="output CSV path (default: alongside checkpoint)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment one map image")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PNG")
    p.add_argument("--out", required=True, help="output label PNG")
    p.add_argument(
        "--postprocess",
        metavar="SPEC",
        help=f"denoise policy, e.g. {DEFAULT_POLICY_TEXT!r} (default: none)",
    )
    p.add_argument("--probmaps", help="directory for per-class probability PNGs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score rendered predictions against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="prediction PNG or directory")
    p.add_argument("--gt", required=True, help="ground-truth PNG or directory")
    p.add_argument("--out", help="output metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="gen-data, train, predict, eval in sequence")
    _add_common(p)
    p.add_argument("--out", required=True, help="working directory for all outputs")
    p.add_argument(
        "--postprocess",
        metavar="SPEC",
        help=f"denoise policy (default: {DEFAULT_POLICY_TEXT!r})",
    )
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ArgumentError) as exc:
        return _fail("usage", exc, 1)
    except (DataError, ShapeError, StateError) as exc:
        return _fail("data", exc, 2)
    except NumericError as exc:
        return _fail("numeric", exc, 3)
    except (FileFormatError, OSError) as exc:
        return _fail("io", exc, 4)
    except MapSegError as exc:  # anything uncategorized
        return _fail("error", exc, 2)


def _fail(category: str, exc: Exception, code: int) -> int:
    print(f"mapseg: error: [{category}] {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
