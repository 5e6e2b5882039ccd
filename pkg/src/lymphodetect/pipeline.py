"""Model-level inference glue: normalize, pad, run the network, post-process.

These helpers bind a checkpoint's stain reference and calibrated threshold
to the raw prediction path so the CLI and the HTTP service share one code
path for detection.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import model as fcn
from .augment import mirror_pad
from .postprocess import (
    Detection,
    PostprocessConfig,
    THRESHOLD_GRID,
    detect,
    select_threshold,
)
from .stain import normalize


def prepare_image(image: np.ndarray, params: fcn.ModelParams) -> np.ndarray:
    """Stain-normalize (when the checkpoint carries a reference) and scale."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        if params.stain_reference is not None:
            img = normalize(img, params.stain_reference)
        return img.astype(np.float32) / 255.0
    return img.astype(np.float32)


def predict_probmap(params: fcn.ModelParams, image: np.ndarray) -> np.ndarray:
    """Eval-mode probability map at input resolution.

    The image is mirror-padded on the bottom/right up to the network's
    stride multiple and the output cropped back, so any size is accepted.
    """
    img = prepare_image(image, params)
    height, width = img.shape[:2]
    mult = params.config.stride_multiple
    pad_b = (-height) % mult
    pad_r = (-width) % mult
    if pad_b or pad_r:
        img = mirror_pad(img, 0, pad_b, 0, pad_r)
    prob = fcn.forward(params, img, mode="eval")
    return prob[:height, :width]


def run_detection(
    params: fcn.ModelParams,
    image: np.ndarray,
    config: PostprocessConfig | None = None,
) -> tuple[list[Detection], np.ndarray]:
    """Detect lymphocytes in a raw image with the checkpoint's threshold."""
    if config is None:
        config = PostprocessConfig(threshold=params.threshold)
    probmap = predict_probmap(params, image)
    return detect(probmap, config), probmap


def calibrate_threshold_after_finetune(
    old_params: fcn.ModelParams,
    new_params: fcn.ModelParams,
    reference_fovs: list[np.ndarray],
    grid: tuple[float, ...] = THRESHOLD_GRID,
) -> float:
    """Threshold for the fine-tuned model that best preserves old masks.

    Runs both models over the reference FOVs and picks the grid threshold
    minimizing total mask disagreement against the old model at its
    calibrated threshold. With no reference FOVs the old threshold is kept
    (with a warning).
    """
    if not reference_fovs:
        warnings.warn(
            "no reference FOVs for threshold recalibration; keeping the old threshold",
            stacklevel=2,
        )
        return float(old_params.threshold)
    old_maps = [predict_probmap(old_params, fov) for fov in reference_fovs]
    new_maps = [predict_probmap(new_params, fov) for fov in reference_fovs]
    return select_threshold(old_maps, new_maps, old_params.threshold, grid)
