#!/usr/bin/env python3
"""What the post-processor does to a probability map, filter by filter.

A probability map is thresholded into a binary mask; 8-connected regions
are then screened by eccentricity (> 0.8 means too elongated to be a
lymphocyte) and by area (outside [S1, S2] means too small or too large).
Survivors become detections whose confidence is the mean probability over
the region. This script constructs a map with one good disk, one bar, one
speck and one faint disk, and shows which filters fire.
"""

import os

import numpy as np

from lymphodetect.postprocess import (
    PostprocessConfig,
    default_size_bounds,
    detect,
    render_overlay,
)
from lymphodetect.raster import connected_components, disk_dilate, write_image

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    os.makedirs(OUT, exist_ok=True)
    prob = np.full((160, 220), 0.08)
    prob[disk_dilate([(50, 50)], 13, 160, 220)] = 0.93   # a proper lymphocyte
    prob[70:74, 120:190] = 0.9                            # elongated bar: eccentricity kill
    prob[disk_dilate([(120, 40)], 3, 160, 220)] = 0.9     # tiny speck: below S1
    prob[disk_dilate([(120, 170)], 13, 160, 220)] = 0.35  # too faint: below threshold

    s1, s2 = default_size_bounds()
    print(f"size bounds from the 24-40 px diameter prior: S1 {s1:.0f}, S2 {s2:.0f}")

    config = PostprocessConfig(threshold=0.5)
    mask = prob >= config.threshold
    print("\nregions above threshold 0.5:")
    for region in connected_components(mask):
        fate = "kept"
        if region.eccentricity > config.eccentricity_max:
            fate = f"dropped (eccentricity {region.eccentricity:.2f} > 0.8)"
        elif not s1 <= region.area <= s2:
            fate = f"dropped (area {region.area} outside [{s1:.0f}, {s2:.0f}])"
        print(f"  area {region.area:4d} ecc {region.eccentricity:.2f} at {tuple(round(v) for v in region.centroid)} -> {fate}")

    detections = detect(prob, config)
    print(f"\nfinal detections: {len(detections)}")
    for det in detections:
        print(f"  position {tuple(round(v, 1) for v in det.position)} confidence {det.confidence:.2f}")

    base = np.stack([(prob * 255).astype(np.uint8)] * 3, axis=-1)
    write_image(os.path.join(OUT, "postprocess_overlay.png"), render_overlay(base, detections))
    print(f"wrote {OUT}/postprocess_overlay.png")


if __name__ == "__main__":
    main()
