#!/usr/bin/env python3
"""From free-form clicks and scribbles to per-pixel training maps.

A pathologist marks a field of view with four kinds of annotations:
positive points (PP) near lymphocyte centers, positive scribbles (PS)
inside lymphocytes, negative points (NP) inside look-alike objects, and
negative scribbles (NS) over background or between touching cells. This
script compiles one small annotation set into the label map (2 =
lymphocyte, 1 = non-lymphocyte, 0 = ignore) and the weight map
({0, 0.5, 1}) and writes audit PNGs.
"""

import os

import numpy as np

from lymphodetect.annotations import (
    AnnotationSet,
    compile_maps,
    labels_to_png_array,
    weights_to_png_array,
)
from lymphodetect.raster import write_image

OUT = os.path.join(os.path.dirname(__file__), "output")


def main():
    os.makedirs(OUT, exist_ok=True)
    ann = AnnotationSet(
        fov_id="demo",
        positive_points=[(60, 60), (60, 110)],
        positive_scribbles=[[(130, 40), (135, 52), (133, 64)]],
        negative_points=[(150, 150)],
        negative_scribbles=[[(60, 82), (60, 90)]],  # carving between the two PPs
    )
    labels, weights = compile_maps(ann, 200, 200, r1=11)

    # the compiler dilates each PP by r1-5 (confident core, weight 1) and by
    # r1 (cell extent; the annulus gets weight 0.5), each NP by r1+5
    print("label histogram:", {int(v): int((labels == v).sum()) for v in np.unique(labels)})
    print("weight histogram:", {float(v): int((weights == v).sum()) for v in np.unique(weights)})

    probe = [(60, 64, "PP core"), (60, 69, "PP annulus"), (60, 86, "NS override"), (150, 160, "NP halo")]
    for r, c, what in probe:
        print(f"  ({r:3d},{c:3d}) {what:12s} -> label {labels[r, c]}, weight {weights[r, c]:.1f}")

    write_image(os.path.join(OUT, "labels.png"), labels_to_png_array(labels))
    write_image(os.path.join(OUT, "weights.png"), weights_to_png_array(weights))
    print(f"wrote {OUT}/labels.png and {OUT}/weights.png ({{0,128,255}} encoding)")


if __name__ == "__main__":
    main()
