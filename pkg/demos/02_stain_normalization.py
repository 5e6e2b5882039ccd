#!/usr/bin/env python3
"""Making H&E color appearance consistent across images.

Staining conditions vary between slides; the detector must see one color
distribution at train and test time. We normalize by matching per-channel
Lab statistics against a reference FOV. Here a synthetic scene gets an
artificial color cast, then normalization pulls both versions to the same
reference statistics.
"""

import os

import numpy as np

from lymphodetect.raster import write_image
from lymphodetect.stain import fit_reference, normalize
from lymphodetect.synthetic import generate_scene

OUT = os.path.join(os.path.dirname(__file__), "output")


def channel_means(image):
    return tuple(round(float(image[..., c].mean()), 1) for c in range(3))


def main():
    os.makedirs(OUT, exist_ok=True)
    scene = generate_scene((192, 192), 5, 1, clustering=0.2, rng=np.random.default_rng(3))
    original = scene.image
    # a global color cast, as a differently stained slide would show
    cast = np.clip(original.astype(np.float64) * [1.18, 0.92, 1.05] + [8, -6, 4], 0, 255).astype(np.uint8)

    reference = fit_reference(original)
    normalized_original = normalize(original, reference)
    normalized_cast = normalize(cast, reference)

    print("RGB channel means")
    print("  original:        ", channel_means(original))
    print("  color cast:      ", channel_means(cast))
    print("  original -> norm:", channel_means(normalized_original))
    print("  cast -> norm:    ", channel_means(normalized_cast))

    side_by_side = np.concatenate([original, cast, normalized_cast], axis=1)
    write_image(os.path.join(OUT, "stain_normalization.png"), side_by_side)
    print(f"wrote {OUT}/stain_normalization.png (original | cast | cast normalized)")


if __name__ == "__main__":
    main()
