#!/usr/bin/env python3
"""Fine-tuning from correction clicks, with threshold recalibration.

When a pathologist corrects detection errors, the clicks become new
annotations. Fine-tuning mixes the n correction FOVs (F) with n replayed
prior FOVs (A) at a small learning rate and high momentum, validates on a
disjoint prior sample (B) to stop before overfitting, and finally picks the
threshold that keeps the new model's masks closest to the old model's on
old training images.
"""

import numpy as np

from lymphodetect import model as fcn
from lymphodetect.annotations import AnnotationSet, DatasetSplit
from lymphodetect.pipeline import calibrate_threshold_after_finetune, run_detection
from lymphodetect.stain import fit_reference
from lymphodetect.synthetic import generate_scene
from lymphodetect.training import (
    Schedule,
    TrainState,
    assemble_finetune_job,
    compile_training_fov,
    finetune,
    train,
)


def main():
    rng = np.random.default_rng(4)
    scenes = [generate_scene((160, 160), 3, 1, clustering=0.0, rng=rng) for _ in range(8)]
    reference = fit_reference(scenes[0].image)
    fovs = [
        compile_training_fov(f"prior{i}", sc.image, sc.annotations, reference)
        for i, sc in enumerate(scenes)
    ]

    config = fcn.NetworkConfig(base_channels=16, scales=2, dropout_rate=0.0)
    params = fcn.init_params(config, rng_seed=0)
    params.stain_reference = reference
    base = train(
        TrainState.new(params, seed=3),
        {"synthetic": DatasetSplit(train=fovs[:6], val=fovs[6:])},
        epochs=20,
        train_epoch_size=25,
        val_epoch_size=5,
        patience=100,
        K=48,
        schedule=Schedule(((1, 14, 3e-3, 0.9), (15, 10**9, 5e-4, 0.9))),
    )
    print(f"base model trained (best val {base.best_val_loss:.4f})")

    # pathologist reviews two new FOVs and clicks missed cells / false alarms
    correction_scenes = [generate_scene((160, 160), 3, 1, rng=rng) for _ in range(2)]
    new_fovs = []
    for i, scene in enumerate(correction_scenes):
        ann = AnnotationSet(fov_id=f"corr{i}", source="correction")
        for point in scene.annotations.positive_points:
            ann.add("PP", [point])
        for point in scene.annotations.negative_points:
            ann.add("NP", [point])
        new_fovs.append(compile_training_fov(f"corr{i}", scene.image, ann, reference))

    job = assemble_finetune_job(new_fovs, fovs[:6], np.random.default_rng(5))
    print(
        f"fine-tune job: F {len(job.new_fovs)} + A {len(job.replay_fovs)} train, "
        f"B {len(job.holdout_fovs)} validate, lr {job.lr}, momentum {job.momentum}"
    )
    child = finetune(
        TrainState.new(base.params.copy(), seed=6),
        job,
        max_epochs=5,
        train_epoch_size=25,
        val_epoch_size=5,
        K=48,
        parent_id="base",
    )
    threshold = calibrate_threshold_after_finetune(
        base.params, child.params, [f.image for f in job.replay_fovs]
    )
    child.params.threshold = threshold
    print(f"child model (parent {child.params.parent_id!r}), recalibrated threshold {threshold:.2f}")

    probe = correction_scenes[0]
    before, _ = run_detection(base.params, probe.image)
    after, _ = run_detection(child.params, probe.image)
    print(f"detections on a correction FOV: before {len(before)}, after {len(after)}, truth {len(probe.lymphocyte_centers)}")


if __name__ == "__main__":
    main()
