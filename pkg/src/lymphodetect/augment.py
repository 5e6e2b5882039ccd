"""Randomized training-patch sampling.

Each training iteration draws one KxK patch from a FOV: the image is flipped
with 50% probability (25% horizontal, 25% vertical), rotated with 50%
probability by a random integer angle in [1, 360], then cropped around a
position picked uniformly from the labeled pixels, jittered by up to 20
pixels per axis. The label and weight maps undergo the identical geometric
transform; labels and weights travel by nearest-neighbour so they keep their
categorical values, the image is interpolated bilinearly. Crops that leave
the FOV are filled by mirror padding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

JITTER = 20  # max per-axis offset between anchor and crop center


@dataclass(frozen=True)
class TrainingPatch:
    """One aligned (image, labels, weights) crop plus its source anchor."""

    image: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    anchor: tuple[int, int]  # (row, col) in the transformed FOV
    origin: tuple[int, int]  # crop top-left in the transformed FOV


def mirror_pad(
    image: np.ndarray, top: int, bottom: int, left: int, right: int
) -> np.ndarray:
    """Reflection-pad without repeating the edge pixel.

    The first padded row beyond an edge mirrors the first row inside it,
    e.g. [a, b, c] padded left by 2 becomes [c, b, a, b, c].

    Raises:
        ValueError: if any pad extent reaches the image dimension.
    """
    for pad in (top, bottom, left, right):
        if pad < 0:
            raise ValueError("pad extents must be >= 0")
    height, width = image.shape[:2]
    if max(top, bottom) >= height or max(left, right) >= width:
        raise ValueError(
            f"pad extents ({top},{bottom},{left},{right}) too large for "
            f"{height}x{width} image"
        )
    pads = [(top, bottom), (left, right)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pads, mode="reflect")


def _flip(arrays: list[np.ndarray], u: float) -> list[np.ndarray]:
    if u < 0.25:  # horizontal: mirror left-right
        return [np.flip(a, axis=1) for a in arrays]
    if u < 0.5:  # vertical: mirror top-bottom
        return [np.flip(a, axis=0) for a in arrays]
    return arrays


def _rotate(array: np.ndarray, angle: float, order: int) -> np.ndarray:
    return ndimage.rotate(
        array, angle, reshape=False, order=order, mode="mirror", prefilter=False
    )


def sample_patch(
    fov: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    K: int,
    rng: np.random.Generator,
) -> TrainingPatch:
    """Draw one augmented KxK training patch.

    Args:
        fov: HxWx3 image (uint8 or float).
        labels: HxW label map in {0, 1, 2}.
        weights: HxW weight map in {0, 0.5, 1}.
        K: patch side length.
        rng: numpy Generator; the draw sequence is fixed, so a seeded rng
            reproduces the patch exactly.

    Raises:
        ValueError: if the label map has no labeled (> 0) pixel, or K is not
            a multiple of 16 (four 2x down-samplings).
    """
    if K % 16:
        raise ValueError(f"K must be divisible by 16, got {K}")
    if fov.shape[:2] != labels.shape or labels.shape != weights.shape:
        raise ValueError("fov, labels and weights must share spatial dims")

    image = fov
    lab = labels
    wgt = weights

    image, lab, wgt = _flip([image, lab, wgt], rng.random())

    if rng.random() < 0.5:
        theta = int(rng.integers(1, 361))
        as_float = image.astype(np.float64)
        rotated = _rotate(as_float, theta, order=1)
        if np.issubdtype(image.dtype, np.integer):
            info = np.iinfo(image.dtype)
            image = np.clip(np.rint(rotated), info.min, info.max).astype(image.dtype)
        else:
            image = rotated.astype(image.dtype)
        lab = _rotate(lab, theta, order=0)
        wgt = _rotate(wgt, theta, order=0)

    anchors = np.argwhere(lab > 0)
    if anchors.shape[0] == 0:
        raise ValueError("FOV has no labeled pixel to anchor a patch on")
    cr, cc = anchors[int(rng.integers(anchors.shape[0]))]
    dr = int(rng.integers(-JITTER, JITTER + 1))
    dc = int(rng.integers(-JITTER, JITTER + 1))

    half = K // 2
    top = cr + dr - half
    left = cc + dc - half

    height, width = lab.shape
    pad_top = max(0, -top)
    pad_left = max(0, -left)
    pad_bottom = max(0, top + K - height)
    pad_right = max(0, left + K - width)

    def crop(a: np.ndarray) -> np.ndarray:
        padded = mirror_pad(a, pad_top, pad_bottom, pad_left, pad_right)
        r0 = top + pad_top
        c0 = left + pad_left
        return padded[r0 : r0 + K, c0 : c0 + K].copy()

    return TrainingPatch(
        image=crop(image),
        labels=crop(lab),
        weights=crop(wgt),
        anchor=(int(cr), int(cc)),
        origin=(int(top), int(left)),
    )
