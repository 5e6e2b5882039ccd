"""Raster containers and region primitives.

Images are numpy arrays indexed (row, col), origin at the top-left corner.
Raw images are uint8 (HxW or HxWx3), probability maps are floats in [0, 1],
masks are boolean HxW. Regions are 8-connected blobs of true pixels together
with their area, centroid and second-moment eccentricity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

# 8-connectivity: diagonal neighbours belong to the same blob
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)

# Treating each pixel as a unit square adds 1/12 variance per axis, which
# keeps the second-moment ellipse defined for single-pixel regions.
PIXEL_EXTENT_VAR = 1.0 / 12.0


@dataclass(frozen=True)
class Region:
    """One 8-connected blob of true pixels.

    Attributes:
        pixels: (N, 2) int array of (row, col) coordinates.
        area: number of pixels, == len(pixels).
        centroid: arithmetic mean (row, col) of the pixel coordinates.
        eccentricity: sqrt(1 - l2/l1) of the second-moment ellipse, in [0, 1).
    """

    pixels: np.ndarray
    area: int
    centroid: tuple[float, float]
    eccentricity: float


def disk_dilate(
    points: list[tuple[int, int]],
    radius: float,
    height: int,
    width: int,
) -> np.ndarray:
    """Dilate a point set by a disk of the given radius.

    A mask pixel is true iff its Euclidean distance to some point is <= radius
    (inclusive, so radius 0 keeps exactly the points themselves). The disk is
    clipped at the image boundary.

    Raises:
        ValueError: if radius < 0 or a point lies outside the image.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    mask = np.zeros((height, width), dtype=bool)
    if not points:
        return mask

    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if (
        (pts[:, 0] < 0).any()
        or (pts[:, 0] >= height).any()
        or (pts[:, 1] < 0).any()
        or (pts[:, 1] >= width).any()
    ):
        raise ValueError("dilation point outside image bounds")

    r = int(np.floor(radius))
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    disk = (dr * dr + dc * dc) <= radius * radius
    offsets_r = dr[disk]
    offsets_c = dc[disk]
    for row, col in pts:
        rows = row + offsets_r
        cols = col + offsets_c
        keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        mask[rows[keep], cols[keep]] = True
    return mask


def region_moments(pixels: np.ndarray) -> tuple[tuple[float, float], float]:
    """Centroid and eccentricity of a pixel set.

    The eccentricity is sqrt(1 - l2/l1), where l1 >= l2 are the eigenvalues
    of the 2x2 coordinate covariance of the pixels with the per-axis pixel
    extent correction (+1/12) applied. A single pixel has eccentricity 0.

    Args:
        pixels: (N, 2) array of (row, col) coordinates, N >= 1.

    Raises:
        ValueError: on an empty pixel set.
    """
    pts = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("region must contain at least one pixel")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / pts.shape[0]
    cov[0, 0] += PIXEL_EXTENT_VAR
    cov[1, 1] += PIXEL_EXTENT_VAR
    eigvals = np.linalg.eigvalsh(cov)  # ascending, both > 0 by construction
    lam2, lam1 = float(eigvals[0]), float(eigvals[1])
    ratio = min(lam2 / lam1, 1.0)  # guard rounding when lam1 == lam2
    ecc = float(np.sqrt(1.0 - ratio))
    return (float(centroid[0]), float(centroid[1])), ecc


def connected_components(mask: np.ndarray) -> list[Region]:
    """Partition true pixels of a boolean mask into maximal 8-connected regions.

    Regions are returned in row-major order of their first pixel. An empty
    mask yields an empty list.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    labeled, count = ndimage.label(mask, structure=EIGHT_CONNECTED)
    regions: list[Region] = []
    for lab in range(1, count + 1):
        pixels = np.argwhere(labeled == lab)
        centroid, ecc = region_moments(pixels)
        regions.append(
            Region(
                pixels=pixels,
                area=int(pixels.shape[0]),
                centroid=centroid,
                eccentricity=ecc,
            )
        )
    return regions


# --------------------------------------------------------------------------
# PNG IO
# --------------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Read a PNG as uint8, HxW for grayscale or HxWx3 for RGB."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8)


def write_image(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_mask(path) -> np.ndarray:
    """Read a {0,255} single-channel PNG as a boolean mask."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


def write_mask(path, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr).save(path)
