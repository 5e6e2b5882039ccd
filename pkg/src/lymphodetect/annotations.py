"""Compile free-form annotations into per-pixel supervision maps.

Pathologists provide four kinds of annotations on a FOV: positive points
(PP, one click near a lymphocyte center), positive scribbles (PS, strokes
inside a lymphocyte), negative points (NP, one click inside a similar
non-lymphocyte object) and negative scribbles (NS, strokes over background
or between proximal lymphocytes).

Compilation turns these into a label map (2 = lymphocyte, 1 = non-lymphocyte,
0 = ignore) and a weight map ({0, 0.5, 1}) by dilating the point annotations
with disks sized from the known lymphocyte diameter:

    PP1 = dilate(PP, r1 - 5)   confident lymphocyte core, weight 1
    PP2 = dilate(PP, r1)       lymphocyte extent, annulus PP2 - PP1 weight 0.5
    NP1 = dilate(NP, r1 + 5)   non-lymphocyte neighbourhood, weight 1

Scribbles are rasterized as 1-pixel polylines and are not dilated. Negative
annotations override positive ones where they overlap (negative scribbles are
drawn deliberately to carve separations between touching lymphocytes), and
overridden pixels take weight 1.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .raster import disk_dilate

DEFAULT_R1 = 11

ANNOTATION_KINDS = ("PP", "PS", "NP", "NS")


@dataclass
class AnnotationSet:
    """All annotations attached to one FOV. Coordinates are (row, col)."""

    fov_id: str
    positive_points: list[tuple[int, int]] = field(default_factory=list)
    positive_scribbles: list[list[tuple[int, int]]] = field(default_factory=list)
    negative_points: list[tuple[int, int]] = field(default_factory=list)
    negative_scribbles: list[list[tuple[int, int]]] = field(default_factory=list)
    source: str = "public"  # public | in_house | correction

    def is_empty(self) -> bool:
        return not (
            self.positive_points
            or self.positive_scribbles
            or self.negative_points
            or self.negative_scribbles
        )

    def add(self, kind: str, points: list[tuple[int, int]]) -> None:
        """Append one annotation record (a click or one scribble stroke)."""
        if kind == "PP":
            self.positive_points.extend((int(r), int(c)) for r, c in points)
        elif kind == "NP":
            self.negative_points.extend((int(r), int(c)) for r, c in points)
        elif kind == "PS":
            self.positive_scribbles.append([(int(r), int(c)) for r, c in points])
        elif kind == "NS":
            self.negative_scribbles.append([(int(r), int(c)) for r, c in points])
        else:
            raise ValueError(f"unknown annotation kind {kind!r}")


@dataclass(frozen=True)
class DatasetSplit:
    """Training/validation partition of one source's FOV list."""

    train: list
    val: list


def line_pixels(p0: tuple[int, int], p1: tuple[int, int]) -> list[tuple[int, int]]:
    """Bresenham line from p0 to p1 inclusive, (row, col) coordinates."""
    r0, c0 = int(p0[0]), int(p0[1])
    r1, c1 = int(p1[0]), int(p1[1])
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    pixels = []
    r, c = r0, c0
    while True:
        pixels.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return pixels


def scribble_pixels(polyline: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Rasterize a stroke polyline to an ordered 1-pixel-wide chain."""
    if not polyline:
        return []
    chain = [(int(polyline[0][0]), int(polyline[0][1]))]
    for p0, p1 in zip(polyline, polyline[1:]):
        seg = line_pixels(p0, p1)
        chain.extend(seg[1:])  # avoid duplicating the joint pixel
    return chain


def _scribble_mask(scribbles, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for stroke in scribbles:
        for r, c in scribble_pixels(stroke):
            if not (0 <= r < height and 0 <= c < width):
                raise ValueError(f"scribble pixel ({r}, {c}) outside image bounds")
            mask[r, c] = True
    return mask


def compile_maps(
    annotations: AnnotationSet,
    height: int,
    width: int,
    r1: int = DEFAULT_R1,
) -> tuple[np.ndarray, np.ndarray]:
    """Build the label and weight maps for one FOV.

    Returns:
        labels: uint8 HxW in {0, 1, 2}.
        weights: float32 HxW in {0, 0.5, 1}.

    Raises:
        ValueError: if r1 <= 5 (the inner dilation radius r1 - 5 must be
            positive) or any annotation falls outside the image.
    """
    if r1 <= 5:
        raise ValueError(f"r1 must be > 5, got {r1}")

    pp1 = disk_dilate(annotations.positive_points, r1 - 5, height, width)
    pp2 = disk_dilate(annotations.positive_points, r1, height, width)
    np1 = disk_dilate(annotations.negative_points, r1 + 5, height, width)
    ps = _scribble_mask(annotations.positive_scribbles, height, width)
    ns = _scribble_mask(annotations.negative_scribbles, height, width)

    positive = pp2 | ps
    negative = np1 | ns

    labels = np.zeros((height, width), dtype=np.uint8)
    labels[positive] = 2
    labels[negative] = 1  # negative wins on overlap

    weights = np.zeros((height, width), dtype=np.float32)
    weights[pp2 & ~pp1] = 0.5
    weights[pp1 | ps] = 1.0
    weights[negative] = 1.0  # overridden pixels contribute at full weight
    return labels, weights


def tile_fov(
    fov: np.ndarray,
    annotations: AnnotationSet,
    patch: int = 400,
    stride: int = 200,
    center: int = 200,
) -> list[tuple[np.ndarray, AnnotationSet]]:
    """Cut a large FOV into overlapping patches, keeping annotated ones.

    Windows of `patch` x `patch` are laid out at the given stride, with the
    final row/column window snapped to the image edge. A window whose central
    `center` x `center` region contains no annotation pixel is discarded.
    Annotation coordinates are re-expressed in patch coordinates; scribbles
    are clipped to the window (split into separate strokes where they leave
    it).

    Raises:
        ValueError: if the FOV is smaller than the patch size.
    """
    height, width = fov.shape[:2]
    if height < patch or width < patch:
        raise ValueError(
            f"FOV {height}x{width} is smaller than the {patch}x{patch} patch size"
        )

    def starts(dim: int) -> list[int]:
        s = list(range(0, dim - patch + 1, stride))
        if s[-1] != dim - patch:
            s.append(dim - patch)
        return s

    # every annotation pixel, for the center-region test
    ann_pixels: list[tuple[int, int]] = []
    ann_pixels.extend(annotations.positive_points)
    ann_pixels.extend(annotations.negative_points)
    for stroke in annotations.positive_scribbles + annotations.negative_scribbles:
        ann_pixels.extend(scribble_pixels(stroke))

    margin = (patch - center) // 2
    out = []
    for r0 in starts(height):
        for c0 in starts(width):
            in_center = any(
                r0 + margin <= r < r0 + margin + center
                and c0 + margin <= c < c0 + margin + center
                for r, c in ann_pixels
            )
            if not in_center:
                continue

            def clip_points(points):
                return [
                    (r - r0, c - c0)
                    for r, c in points
                    if r0 <= r < r0 + patch and c0 <= c < c0 + patch
                ]

            def clip_scribbles(scribbles):
                clipped = []
                for stroke in scribbles:
                    run: list[tuple[int, int]] = []
                    for r, c in scribble_pixels(stroke):
                        if r0 <= r < r0 + patch and c0 <= c < c0 + patch:
                            run.append((r - r0, c - c0))
                        elif run:
                            clipped.append(run)
                            run = []
                    if run:
                        clipped.append(run)
                return clipped

            patch_ann = AnnotationSet(
                fov_id=f"{annotations.fov_id}@{r0}_{c0}",
                positive_points=clip_points(annotations.positive_points),
                positive_scribbles=clip_scribbles(annotations.positive_scribbles),
                negative_points=clip_points(annotations.negative_points),
                negative_scribbles=clip_scribbles(annotations.negative_scribbles),
                source=annotations.source,
            )
            out.append((fov[r0 : r0 + patch, c0 : c0 + patch].copy(), patch_ann))
    return out


def split_dataset(fovs: list, ratio: float = 0.9, rng_seed: int = 0) -> DatasetSplit:
    """Randomly partition FOVs into train/validation at the given ratio.

    Deterministic for a fixed seed. The training share is round(ratio * N),
    clamped so neither side is empty.

    Raises:
        ValueError: with fewer than 2 FOVs.
    """
    n = len(fovs)
    if n < 2:
        raise ValueError(f"need at least 2 FOVs to split, got {n}")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(n)
    n_train = int(np.floor(ratio * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    train = [fovs[i] for i in order[:n_train]]
    val = [fovs[i] for i in order[n_train:]]
    return DatasetSplit(train=train, val=val)


# --------------------------------------------------------------------------
# Record persistence (one JSON record per annotation, line-delimited)
# --------------------------------------------------------------------------

def record_to_json(
    fov_id: str,
    kind: str,
    points: list[tuple[int, int]],
    author: str = "",
    timestamp: float | None = None,
) -> str:
    if kind not in ANNOTATION_KINDS:
        raise ValueError(f"unknown annotation kind {kind!r}")
    return json.dumps(
        {
            "fov_id": fov_id,
            "kind": kind,
            "points": [[int(r), int(c)] for r, c in points],
            "author": author,
            "timestamp": time.time() if timestamp is None else timestamp,
        }
    )


def write_records(path, records: list[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                record_to_json(
                    rec["fov_id"],
                    rec["kind"],
                    rec["points"],
                    rec.get("author", ""),
                    rec.get("timestamp"),
                )
                + "\n"
            )


def read_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def records_to_sets(records: list[dict], source: str = "public") -> dict[str, AnnotationSet]:
    """Group annotation records into one AnnotationSet per FOV."""
    sets: dict[str, AnnotationSet] = {}
    for rec in records:
        fov_id = rec["fov_id"]
        if fov_id not in sets:
            sets[fov_id] = AnnotationSet(fov_id=fov_id, source=source)
        sets[fov_id].add(rec["kind"], [tuple(p) for p in rec["points"]])
    return sets


_AUDIT_LEVELS = np.array([0, 128, 255], dtype=np.uint8)


def labels_to_png_array(labels: np.ndarray) -> np.ndarray:
    """Map labels {0,1,2} to {0,128,255} for visual audit PNGs."""
    return _AUDIT_LEVELS[np.asarray(labels, dtype=np.intp)]


def weights_to_png_array(weights: np.ndarray) -> np.ndarray:
    """Map weights {0,0.5,1} to {0,128,255} for visual audit PNGs."""
    levels = np.rint(np.asarray(weights, dtype=np.float64) * 2).astype(np.intp)
    return _AUDIT_LEVELS[levels]
