"""Turn probability maps into located detections with confidence scores.

The detector thresholds the lymphocyte-probability channel into a binary
mask, takes 8-connected components, discards elongated regions
(eccentricity > 0.8) and regions whose area falls outside [S1, S2], and
reports each survivor's centroid with a confidence score equal to the mean
probability over the region. The size bounds default to the known
lymphocyte diameter range (24 to 40 pixels) with asymmetric slack, since
partial occlusion shrinks regions more often than merging inflates them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import connected_components

DEFAULT_THRESHOLD = 0.5
ECCENTRICITY_MAX = 0.8
THRESHOLD_GRID = tuple(round(0.05 + 0.01 * k, 2) for k in range(91))  # 0.05 .. 0.95


def default_size_bounds(
    diameter_min: float = 24.0,
    diameter_max: float = 40.0,
    lower_slack: float = 0.5,
    upper_slack: float = 2.0,
) -> tuple[float, float]:
    """Region-area bounds [S1, S2] from the lymphocyte diameter range.

    S1 = lower_slack * pi * (dmin/2)^2, floored at 1 pixel;
    S2 = upper_slack * pi * (dmax/2)^2.
    """
    if not 0 < diameter_min < diameter_max:
        raise ValueError(
            f"need 0 < diameter_min < diameter_max, got ({diameter_min}, {diameter_max})"
        )
    s1 = max(1.0, lower_slack * math.pi * (diameter_min / 2.0) ** 2)
    s2 = upper_slack * math.pi * (diameter_max / 2.0) ** 2
    return s1, s2


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = DEFAULT_THRESHOLD
    eccentricity_max: float = ECCENTRICITY_MAX
    size_bounds: tuple[float, float] = field(default_factory=default_size_bounds)

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        s1, s2 = self.size_bounds
        if not 0 < s1 < s2:
            raise ValueError("size bounds must satisfy 0 < S1 < S2")


@dataclass(frozen=True)
class Detection:
    position: tuple[float, float]  # centroid (row, col)
    confidence: float  # mean probability over the region
    area: int
    eccentricity: float


def _lymph_channel(probmap: np.ndarray) -> np.ndarray:
    prob = np.asarray(probmap, dtype=np.float64)
    if prob.ndim == 3:
        prob = prob[..., 1]
    if prob.ndim != 2:
        raise ValueError(f"expected HxW or HxWx2 probability map, got {probmap.shape}")
    if prob.min() < 0.0 or prob.max() > 1.0:
        raise ValueError("probability map values must lie in [0, 1]")
    return prob


def detect(probmap: np.ndarray, config: PostprocessConfig | None = None) -> list[Detection]:
    """Locate lymphocytes in a probability map.

    Accepts either the HxWx2 softmax output (channel 1 = lymphocyte) or an
    HxW lymphocyte-probability map. Detections come back sorted by
    descending confidence, ties broken by row-major centroid order.
    """
    config = config or PostprocessConfig()
    prob = _lymph_channel(probmap)
    mask = prob >= config.threshold
    s1, s2 = config.size_bounds
    detections = []
    for region in connected_components(mask):
        if region.eccentricity > config.eccentricity_max:
            continue
        if not s1 <= region.area <= s2:
            continue
        confidence = float(prob[region.pixels[:, 0], region.pixels[:, 1]].mean())
        detections.append(
            Detection(
                position=region.centroid,
                confidence=confidence,
                area=region.area,
                eccentricity=region.eccentricity,
            )
        )
    detections.sort(key=lambda d: (-d.confidence, d.position[0], d.position[1]))
    return detections


def select_threshold(
    old_maps: list[np.ndarray],
    new_maps: list[np.ndarray],
    old_threshold: float,
    grid: tuple[float, ...] = THRESHOLD_GRID,
) -> float:
    """Pick the grid threshold whose new-model masks best match the old ones.

    Disagreement is the total count of pixels where the new-model mask at a
    candidate threshold differs from the old-model mask at the old threshold,
    summed over all reference maps. Ties resolve to the smallest threshold.
    """
    if len(old_maps) != len(new_maps) or not old_maps:
        raise ValueError("need equal, non-empty lists of old and new maps")
    old_masks = [_lymph_channel(m) >= old_threshold for m in old_maps]
    news = [_lymph_channel(m) for m in new_maps]
    best_t = grid[0]
    best_err = None
    for t in grid:
        err = 0
        for old_mask, new in zip(old_masks, news):
            err += int(((new >= t) != old_mask).sum())
        if best_err is None or err < best_err:
            best_err = err
            best_t = t
    return float(best_t)


# --------------------------------------------------------------------------
# Exports: detection records (CSV) and confidence-colored overlays
# --------------------------------------------------------------------------

DETECTION_FIELDS = ("fov_id", "row", "col", "confidence", "area", "eccentricity")


def write_detections(path, fov_id: str, detections: list[Detection]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTION_FIELDS)
        for det in detections:
            writer.writerow(
                [
                    fov_id,
                    f"{det.position[0]:.2f}",
                    f"{det.position[1]:.2f}",
                    f"{det.confidence:.4f}",
                    det.area,
                    f"{det.eccentricity:.4f}",
                ]
            )


def read_detections(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def confidence_color(confidence: float) -> tuple[int, int, int]:
    """Blue (low) to red (high) color scale for detection markers."""
    c = min(max(float(confidence), 0.0), 1.0)
    return (int(round(255 * c)), 64, int(round(255 * (1.0 - c))))


def render_overlay(
    image: np.ndarray, detections: list[Detection], dot_radius: int = 4
) -> np.ndarray:
    """Draw confidence-colored detection dots onto a copy of the image,
    with a confidence color bar along the right edge."""
    canvas = np.asarray(image, dtype=np.uint8).copy()
    if canvas.ndim == 2:
        canvas = np.stack([canvas] * 3, axis=-1)
    height, width = canvas.shape[:2]
    rr, cc = np.mgrid[-dot_radius : dot_radius + 1, -dot_radius : dot_radius + 1]
    disk = rr * rr + cc * cc <= dot_radius * dot_radius
    ring = (rr * rr + cc * cc <= dot_radius * dot_radius) & (
        rr * rr + cc * cc > (dot_radius - 1) ** 2
    )
    for det in detections:
        color = confidence_color(det.confidence)
        r0 = int(round(det.position[0]))
        c0 = int(round(det.position[1]))
        for offsets, shade in ((disk, color), (ring, (0, 0, 0))):
            rows = r0 + rr[offsets]
            cols = c0 + cc[offsets]
            keep = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
            canvas[rows[keep], cols[keep]] = shade

    # confidence color bar: 0 at the bottom, 1 at the top
    bar_w = max(2, width // 48)
    bar_h = max(10, height // 2)
    top = (height - bar_h) // 2
    for i in range(bar_h):
        value = 1.0 - i / max(bar_h - 1, 1)
        canvas[top + i, width - bar_w - 2 : width - 2] = confidence_color(value)
    return canvas
