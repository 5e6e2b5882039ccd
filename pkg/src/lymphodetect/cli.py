"""Command-line interface.

Subcommands: synth, train, detect, compile-annotations, finetune,
calibrate-threshold, serve. Every flag can also be provided by an
environment variable (LYMPHODETECT_<FLAG> with dashes as underscores) or a
JSON config file passed with --config; precedence is flag > environment >
config file > built-in default.

Dataset directories follow one layout everywhere:

    <dir>/images/<fov_id>.png
    <dir>/annotations.jsonl      one {"fov_id", "kind", "points", ...} per line
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import model as fcn
from .annotations import (
    compile_maps,
    labels_to_png_array,
    read_records,
    records_to_sets,
    split_dataset,
    weights_to_png_array,
    write_records,
)
from .pipeline import calibrate_threshold_after_finetune, run_detection
from .postprocess import PostprocessConfig, render_overlay, write_detections
from .raster import read_image, write_image
from .service import ServiceConfig, create_app, load_dataset_fovs
from .stain import fit_reference
from .synthetic import generate_scene
from .training import (
    TrainState,
    assemble_finetune_job,
    compile_training_fov,
    finetune,
    train,
)

ENV_PREFIX = "LYMPHODETECT_"


class _Resolver:
    """flag > environment > config file > default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file_config = {}
        config_path = getattr(args, "config", None) or os.environ.get(ENV_PREFIX + "CONFIG")
        if config_path:
            with open(config_path, encoding="utf-8") as fh:
                self.file_config = json.load(fh)

    def get(self, name: str, default=None, cast=None):
        value = getattr(self.args, name.replace("-", "_"), None)
        if value is None:
            value = os.environ.get(ENV_PREFIX + name.replace("-", "_").upper())
        if value is None:
            value = self.file_config.get(name.replace("-", "_"))
        if value is None:
            return default
        if cast is not None and not isinstance(value, cast if isinstance(cast, type) else object):
            try:
                return cast(value)
            except (TypeError, ValueError) as exc:
                raise SystemExit(f"bad value for {name}: {exc}")
        return value


def _fail(message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(1)


def _load_sources(data_dirs, ratio, seed, r1, reference):
    sources = {}
    for i, directory in enumerate(data_dirs):
        fovs = load_dataset_fovs(directory, reference=reference, r1=r1)
        if len(fovs) < 2:
            raise _fail(f"dataset {directory} needs at least 2 annotated FOVs")
        split = split_dataset(fovs, ratio=ratio, rng_seed=seed + i)
        sources[os.path.basename(os.path.normpath(directory)) or f"source{i}"] = split
    return sources


def _dump_sample_patches(sources, directory, K, seed, count=6):
    """Debug aid: write a few augmented patches as image/label/weight PNGs."""
    from .augment import sample_patch
    from .annotations import labels_to_png_array, weights_to_png_array

    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    pool = [fov for split in sources.values() for fov in split.train]
    for i in range(count):
        fov = pool[i % len(pool)]
        patch = sample_patch(fov.image, fov.labels, fov.weights, K, rng)
        stem = os.path.join(directory, f"patch{i:02d}")
        write_image(f"{stem}.image.png", np.rint(patch.image * 255))
        write_image(f"{stem}.labels.png", labels_to_png_array(patch.labels))
        write_image(f"{stem}.weights.png", weights_to_png_array(patch.weights))
    print(f"dumped {count} sample patches to {directory}")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_synth(res: _Resolver) -> int:
    out = res.get("out")
    if not out:
        raise _fail("synth requires --out")
    scenes = res.get("scenes", 10, int)
    height = res.get("height", 256, int)
    width = res.get("width", 256, int)
    n_lymph = res.get("lymph", 8, int)
    n_distractor = res.get("distractors", 3, int)
    clustering = res.get("clustering", 0.3, float)
    seed = res.get("seed", 0, int)

    image_dir = os.path.join(out, "images")
    os.makedirs(image_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(scenes):
        scene = generate_scene(
            (height, width), n_lymph, n_distractor, clustering=clustering, rng=rng
        )
        fov_id = f"scene{i:03d}"
        write_image(os.path.join(image_dir, f"{fov_id}.png"), scene.image)
        ann = scene.annotations
        for point in ann.positive_points:
            records.append({"fov_id": fov_id, "kind": "PP", "points": [point]})
        for point in ann.negative_points:
            records.append({"fov_id": fov_id, "kind": "NP", "points": [point]})
        for stroke in ann.positive_scribbles:
            records.append({"fov_id": fov_id, "kind": "PS", "points": stroke})
        for stroke in ann.negative_scribbles:
            records.append({"fov_id": fov_id, "kind": "NS", "points": stroke})
    write_records(os.path.join(out, "annotations.jsonl"), records)
    print(f"wrote {scenes} scenes ({len(records)} annotation records) to {out}")
    return 0


def cmd_train(res: _Resolver) -> int:
    data_dirs = res.get("data")
    out = res.get("out")
    if not data_dirs or not out:
        raise _fail("train requires --data and --out")
    seed = res.get("seed", 0, int)
    r1 = res.get("r1", 11, int)
    ratio = res.get("split_ratio", 0.9, float)

    # the stain reference comes from the first FOV of the first source and
    # travels with the checkpoint so inference normalizes identically
    first_records = read_records(os.path.join(data_dirs[0], "annotations.jsonl"))
    first_sets = records_to_sets(first_records)
    if not first_sets:
        raise _fail(f"no annotations found in {data_dirs[0]}")
    first_id = sorted(first_sets)[0]
    reference = fit_reference(
        read_image(os.path.join(data_dirs[0], "images", f"{first_id}.png"))
    )

    sources = _load_sources(data_dirs, ratio, seed, r1, reference)

    dump_dir = res.get("dump_patches")
    if dump_dir:
        _dump_sample_patches(
            sources, dump_dir, res.get("patch_size", 256, int), seed
        )

    config = fcn.NetworkConfig(
        base_channels=res.get("base_channels", 32, int),
        scales=res.get("scales", 4, int),
        dropout_rate=res.get("dropout", 0.1, float),
    )
    params = fcn.init_params(config, rng_seed=seed)
    params.stain_reference = reference
    state = TrainState.new(params, seed=seed)
    result = train(
        state,
        sources,
        epochs=res.get("epochs", 200, int),
        train_epoch_size=res.get("train_epoch_size", 175, int),
        val_epoch_size=res.get("val_epoch_size", 25, int),
        patience=res.get("patience", 20, int),
        K=res.get("patch_size", 256, int),
        checkpoint_dir=out,
    )
    fcn.save_checkpoint(result.params, os.path.join(out, "best"))
    print(
        f"trained to epoch {result.epoch} (best val loss {result.best_val_loss:.4f}); "
        f"checkpoint at {os.path.join(out, 'best')}"
    )
    return 0


def cmd_detect(res: _Resolver) -> int:
    model_dir = res.get("model")
    images = res.get("image")
    out = res.get("out")
    if not model_dir or not images or not out:
        raise _fail("detect requires --model, --image and --out")
    params = fcn.load_checkpoint(model_dir)
    threshold = res.get("threshold", None, float)
    config = PostprocessConfig(threshold=threshold if threshold is not None else params.threshold)
    os.makedirs(out, exist_ok=True)
    for path in images:
        if not os.path.exists(path):
            raise _fail(f"image not found: {path}")
        image = read_image(path)
        detections, _ = run_detection(params, image, config)
        stem = os.path.splitext(os.path.basename(path))[0]
        write_detections(os.path.join(out, f"{stem}.csv"), stem, detections)
        write_image(os.path.join(out, f"{stem}.overlay.png"), render_overlay(image, detections))
        print(f"{path}: {len(detections)} detections")
    return 0


def cmd_compile_annotations(res: _Resolver) -> int:
    ann_path = res.get("annotations")
    fov_id = res.get("fov_id")
    height = res.get("height", None, int)
    width = res.get("width", None, int)
    out = res.get("out")
    if not ann_path or not fov_id or height is None or width is None or not out:
        raise _fail("compile-annotations requires --annotations, --fov-id, --height, --width, --out")
    sets = records_to_sets(read_records(ann_path))
    if fov_id not in sets:
        raise _fail(f"no annotations for FOV {fov_id!r} in {ann_path}")
    labels, weights = compile_maps(sets[fov_id], height, width, r1=res.get("r1", 11, int))
    os.makedirs(out, exist_ok=True)
    write_image(os.path.join(out, f"{fov_id}.labels.png"), labels_to_png_array(labels))
    write_image(os.path.join(out, f"{fov_id}.weights.png"), weights_to_png_array(weights))
    print(f"wrote label/weight maps for {fov_id} to {out}")
    return 0


def cmd_finetune(res: _Resolver) -> int:
    model_dir = res.get("model")
    corrections = res.get("corrections")
    images_dir = res.get("images")
    out = res.get("out")
    if not model_dir or not corrections or not images_dir or not out:
        raise _fail("finetune requires --model, --corrections, --images and --out")
    params = fcn.load_checkpoint(model_dir)
    seed = res.get("seed", 0, int)
    r1 = res.get("r1", 11, int)

    sets = records_to_sets(read_records(corrections), source="correction")
    if not sets:
        raise _fail(f"no correction records in {corrections}")
    new_fovs = []
    for fov_id, ann in sorted(sets.items()):
        path = os.path.join(images_dir, f"{fov_id}.png")
        if not os.path.exists(path):
            raise _fail(f"correction FOV image not found: {path}")
        new_fovs.append(
            compile_training_fov(fov_id, read_image(path), ann, params.stain_reference, r1=r1)
        )

    prior_dir = res.get("data")
    prior = load_dataset_fovs(prior_dir, params.stain_reference, r1=r1) if prior_dir else []
    rng = np.random.default_rng(seed)
    job = assemble_finetune_job(
        new_fovs,
        prior,
        rng,
        lr=res.get("lr", 1e-6, float),
        momentum=res.get("momentum", 0.999, float),
    )
    result = finetune(
        TrainState.new(params.copy(), seed=seed),
        job,
        max_epochs=res.get("max_epochs", 20, int),
        patience=res.get("patience", 3, int),
        train_epoch_size=res.get("train_epoch_size", 175, int),
        val_epoch_size=res.get("val_epoch_size", 25, int),
        K=res.get("patch_size", 256, int),
        parent_id=os.path.basename(os.path.normpath(model_dir)),
    )
    reference_images = [f.image for f in job.replay_fovs] or [f.image for f in new_fovs]
    threshold = calibrate_threshold_after_finetune(params, result.params, reference_images)
    result.params.threshold = threshold
    fcn.save_checkpoint(result.params, out)
    print(f"fine-tuned child checkpoint at {out} (threshold {threshold:.2f})")
    return 0


def cmd_calibrate_threshold(res: _Resolver) -> int:
    old_dir = res.get("old")
    new_dir = res.get("new")
    fovs = res.get("fovs")
    if not old_dir or not new_dir or not fovs:
        raise _fail("calibrate-threshold requires --old, --new and --fovs")
    old_params = fcn.load_checkpoint(old_dir)
    new_params = fcn.load_checkpoint(new_dir)
    images = [read_image(p) for p in fovs]
    threshold = calibrate_threshold_after_finetune(old_params, new_params, images)
    print(f"{threshold:.2f}")
    if res.get("write", False):
        new_params.threshold = threshold
        fcn.save_checkpoint(new_params, new_dir)
    return 0


def cmd_serve(res: _Resolver) -> int:
    storage = res.get("storage")
    if not storage:
        raise _fail("serve requires --storage")
    config = ServiceConfig(
        finetune_trigger=res.get("trigger", 200, int),
        finetune_max_epochs=res.get("max_epochs", 20, int),
        finetune_epoch_size=res.get("train_epoch_size", 175, int),
        finetune_val_size=res.get("val_epoch_size", 25, int),
        finetune_patience=res.get("patience", 3, int),
        patch_size=res.get("patch_size", 256, int),
        r1=res.get("r1", 11, int),
        prior_data_dir=res.get("data"),
        seed=res.get("seed", 0, int),
    )
    app = create_app(storage, config, initial_model=res.get("model"))
    import uvicorn

    uvicorn.run(app, host=res.get("host", "127.0.0.1"), port=res.get("port", 8000, int))
    return 0


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lymphodetect",
        description="Lymphocyte detection: training, inference and the annotation service.",
        epilog="Flags may come from LYMPHODETECT_* environment variables or a "
        "--config JSON file (flag > env > config file).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, configure):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        configure(p)
        p.set_defaults(func=func)

    def synth_args(p):
        p.add_argument("--out")
        p.add_argument("--scenes", type=int)
        p.add_argument("--height", type=int)
        p.add_argument("--width", type=int)
        p.add_argument("--lymph", type=int)
        p.add_argument("--distractors", type=int)
        p.add_argument("--clustering", type=float)
        p.add_argument("--seed", type=int)

    def train_args(p):
        p.add_argument("--data", action="append", help="dataset dir (repeat per source)")
        p.add_argument("--out")
        p.add_argument("--epochs", type=int)
        p.add_argument("--train-epoch-size", type=int)
        p.add_argument("--val-epoch-size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--patch-size", type=int)
        p.add_argument("--base-channels", type=int)
        p.add_argument("--scales", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--split-ratio", type=float)
        p.add_argument("--r1", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--dump-patches", help="debug: write sample patch PNG triplets here")

    def detect_args(p):
        p.add_argument("--model")
        p.add_argument("--image", action="append")
        p.add_argument("--out")
        p.add_argument("--threshold", type=float)

    def compile_args(p):
        p.add_argument("--annotations")
        p.add_argument("--fov-id")
        p.add_argument("--height", type=int)
        p.add_argument("--width", type=int)
        p.add_argument("--r1", type=int)
        p.add_argument("--out")

    def finetune_args(p):
        p.add_argument("--model")
        p.add_argument("--corrections")
        p.add_argument("--images")
        p.add_argument("--data")
        p.add_argument("--out")
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--train-epoch-size", type=int)
        p.add_argument("--val-epoch-size", type=int)
        p.add_argument("--patch-size", type=int)
        p.add_argument("--r1", type=int)
        p.add_argument("--seed", type=int)

    def calibrate_args(p):
        p.add_argument("--old")
        p.add_argument("--new")
        p.add_argument("--fovs", nargs="+")
        p.add_argument("--write", action="store_true", default=None)

    def serve_args(p):
        p.add_argument("--storage")
        p.add_argument("--model")
        p.add_argument("--data", help="prior training data dir for fine-tune replay")
        p.add_argument("--host")
        p.add_argument("--port", type=int)
        p.add_argument("--trigger", type=int)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--train-epoch-size", type=int)
        p.add_argument("--val-epoch-size", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--patch-size", type=int)
        p.add_argument("--r1", type=int)
        p.add_argument("--seed", type=int)

    add("synth", cmd_synth, synth_args)
    add("train", cmd_train, train_args)
    add("detect", cmd_detect, detect_args)
    add("compile-annotations", cmd_compile_annotations, compile_args)
    add("finetune", cmd_finetune, finetune_args)
    add("calibrate-threshold", cmd_calibrate_threshold, calibrate_args)
    add("serve", cmd_serve, serve_args)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(_Resolver(args))
    except SystemExit:
        raise
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
