"""Synthetic H&E-like scenes with exact ground truth.

Scenes contain dark-purple lymphocyte disks (radius 12 to 20 px, matching
the 24 to 40 px diameter prior) and distractor objects (larger pale disks or
elongated blobs) over a noisy pink background. The generator returns the
exact annotation set: a positive point per lymphocyte center, a negative
point per distractor center, and optional negative scribbles carving the
gap between clustered pairs. Appearance is deliberately simple; these
scenes exercise the pipeline mechanics, not histology realism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotations import AnnotationSet

LYMPH_RADIUS = (12.0, 20.0)
# clustered pairs: small radii and a center distance < 30 px, leaving a
# few pixels of valley between the rims (proximal but not fused)
CLUSTER_RADIUS = (12.0, 12.3)
CLUSTER_DISTANCE = (29.0, 29.9)
SPREAD_MIN_DISTANCE = 50.0  # lymphocyte center separation when not clustered

BACKGROUND_RGB = (225.0, 175.0, 205.0)
LYMPH_RGB = (82.0, 52.0, 138.0)
PALE_DISTRACTOR_RGB = (178.0, 128.0, 182.0)
ELONGATED_DISTRACTOR_RGB = (128.0, 88.0, 158.0)


@dataclass(frozen=True)
class SceneObject:
    center: tuple[float, float]  # (row, col)
    radius: float  # semi-major axis for elongated distractors
    kind: str  # lymphocyte | distractor
    minor: float = 0.0  # 0 for disks
    angle: float = 0.0
    clustered: bool = False  # member of a proximal pair

    @property
    def is_disk(self) -> bool:
        return self.minor == 0.0


@dataclass
class SyntheticScene:
    height: int
    width: int
    objects: list[SceneObject]
    image: np.ndarray
    annotations: AnnotationSet

    @property
    def lymphocyte_centers(self) -> list[tuple[float, float]]:
        return [o.center for o in self.objects if o.kind == "lymphocyte"]


class _PackingFailure(Exception):
    pass


def _far_enough(center, others, min_dist) -> bool:
    return all(math.dist(center, o) >= min_dist for o in others)


def _place(
    rng: np.random.Generator,
    height: int,
    width: int,
    margin: float,
    accept,
    tries: int = 600,
):
    for _ in range(tries):
        r = rng.uniform(margin, height - margin)
        c = rng.uniform(margin, width - margin)
        if accept((r, c)):
            return (r, c)
    raise _PackingFailure


def generate_scene(
    dims: tuple[int, int],
    n_lymph: int,
    n_distractor: int,
    clustering: float = 0.0,
    rng: np.random.Generator | None = None,
    include_separators: bool = True,
) -> SyntheticScene:
    """Generate one scene with known lymphocyte positions.

    Args:
        dims: (height, width) of the canvas.
        n_lymph: number of lymphocyte disks.
        n_distractor: number of non-lymphocyte objects.
        clustering: probability in [0, 1] that each lymphocyte after the
            first is placed nearly touching an existing one. At 0 all
            centers are >= 50 px apart; at 1 (and n_lymph >= 2) at least one
            pair sits < 30 px apart.
        include_separators: emit a negative scribble between each clustered
            pair, as an annotator would to carve the separation.

    Raises:
        ValueError: on an infeasible packing request or bad clustering.
        RuntimeError: when rejection sampling cannot place an object.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not 0.0 <= clustering <= 1.0:
        raise ValueError("clustering must lie in [0, 1]")
    height, width = dims
    budget = n_lymph * math.pi * 20.0**2 + n_distractor * math.pi * 34.0**2
    if budget > 0.5 * height * width:
        raise ValueError(
            f"{n_lymph} lymphocytes + {n_distractor} distractors cannot pack "
            f"into a {height}x{width} scene"
        )

    objects = None
    for _ in range(20):  # scene-level retries on unlucky layouts
        try:
            objects, cluster_pairs = _layout(
                rng, height, width, n_lymph, n_distractor, clustering
            )
            break
        except _PackingFailure:
            continue
    if objects is None:
        raise RuntimeError(
            f"could not pack {n_lymph} lymphocytes + {n_distractor} distractors "
            f"into a {height}x{width} scene; reduce counts or clustering"
        )

    image = _render(objects, height, width, rng)

    annotations = AnnotationSet(fov_id="synthetic", source="public")
    for obj in objects:
        point = (int(round(obj.center[0])), int(round(obj.center[1])))
        if obj.kind == "lymphocyte":
            annotations.add("PP", [point])
        else:
            annotations.add("NP", [point])
    if include_separators:
        for a, b in cluster_pairs:
            annotations.negative_scribbles.extend(_separator_strokes(a, b, height, width))

    return SyntheticScene(
        height=height,
        width=width,
        objects=objects,
        image=image,
        annotations=annotations,
    )


def _layout(rng, height, width, n_lymph, n_distractor, clustering):
    """One placement attempt; distractors (the bulkiest objects) go first."""
    objects: list[SceneObject] = []
    placed: list[tuple[tuple[float, float], float]] = []  # (center, extent)

    for _ in range(n_distractor):
        elongated = rng.random() < 0.5
        if elongated:
            major = rng.uniform(24, 34)
            minor = rng.uniform(6, 10)
            angle = rng.uniform(0, math.pi)
        else:
            major = rng.uniform(22, 30)
            minor = 0.0
            angle = 0.0
        center = _place(
            rng,
            height,
            width,
            major + 3,
            lambda p: all(
                math.dist(p, c) >= major + ext + 4.0 for c, ext in placed
            ),
        )
        placed.append((center, major))
        objects.append(
            SceneObject(center=center, radius=major, kind="distractor", minor=minor, angle=angle)
        )

    lymph_centers: list[tuple[float, float]] = []
    cluster_pairs: list[tuple[tuple[float, float], tuple[float, float]]] = []
    in_pair: set[int] = set()
    distractors = list(placed)
    for i in range(n_lymph):
        # partners come from unpaired lymphocytes only, so clusters are
        # clean pairs rather than chains
        free = [j for j in range(len(lymph_centers)) if j not in in_pair]
        clustered = bool(free) and rng.random() < clustering
        if clustered:
            radius = rng.uniform(*CLUSTER_RADIUS)
            partner_idx = free[int(rng.integers(len(free)))]
            partner = lymph_centers[partner_idx]
            placed_center = None
            for _ in range(200):
                angle = rng.uniform(0, 2 * math.pi)
                dist = rng.uniform(*CLUSTER_DISTANCE)
                cand = (
                    partner[0] + dist * math.sin(angle),
                    partner[1] + dist * math.cos(angle),
                )
                margin = radius + 3
                if not (
                    margin <= cand[0] <= height - margin
                    and margin <= cand[1] <= width - margin
                ):
                    continue
                rest = [p for p in lymph_centers if p is not partner]
                if _far_enough(cand, rest, 35.0) and all(
                    math.dist(cand, c) >= radius + ext + 4.0 for c, ext in distractors
                ):
                    placed_center = cand
                    break
            if placed_center is None:
                raise _PackingFailure
            cluster_pairs.append((partner, placed_center))
            in_pair.update({partner_idx, len(lymph_centers)})
            # mark the partner object as clustered too (same list order)
            pobj = objects[n_distractor + partner_idx]
            objects[n_distractor + partner_idx] = SceneObject(
                center=pobj.center, radius=pobj.radius, kind=pobj.kind, clustered=True
            )
            center = placed_center
        else:
            radius = rng.uniform(*LYMPH_RADIUS)
            center = _place(
                rng,
                height,
                width,
                radius + 3,
                lambda p: _far_enough(p, lymph_centers, SPREAD_MIN_DISTANCE)
                and all(
                    math.dist(p, c) >= radius + ext + 4.0 for c, ext in distractors
                ),
            )
        lymph_centers.append(center)
        objects.append(
            SceneObject(center=center, radius=radius, kind="lymphocyte", clustered=clustered)
        )
    return objects, cluster_pairs


def _separator_strokes(a, b, height, width, half_len: float = 12.0):
    """Strokes through the valley midpoint, perpendicular to the pair axis.

    Three parallel 1-px polylines approximate the few-pixel-wide scribble an
    annotator would drag between touching cells. Points on the perpendicular
    bisector sit at least d/2 from either center, so with d/2 > radius the
    strokes never enter the cells themselves.
    """
    mid = ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)
    d = (b[0] - a[0], b[1] - a[1])
    norm = math.hypot(*d) or 1.0
    axis = (d[0] / norm, d[1] / norm)
    perp = (-axis[1], axis[0])

    def clamp(p):
        return (
            int(min(max(round(p[0]), 0), height - 1)),
            int(min(max(round(p[1]), 0), width - 1)),
        )

    strokes = []
    for off in (-2.0, -1.0, 0.0, 1.0, 2.0):
        base = (mid[0] + off * axis[0], mid[1] + off * axis[1])
        strokes.append(
            [
                clamp((base[0] - half_len * perp[0], base[1] - half_len * perp[1])),
                clamp((base[0] + half_len * perp[0], base[1] + half_len * perp[1])),
            ]
        )
    return strokes


def _render(objects, height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    canvas = np.empty((height, width, 3), dtype=np.float64)
    # mottled background: low-frequency blotches over the base pink
    blotch = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (height, width)), sigma=12)
    blotch = blotch / (np.abs(blotch).max() + 1e-9)
    for ch, base in enumerate(BACKGROUND_RGB):
        canvas[..., ch] = base + 14.0 * blotch

    boundary_noise = ndimage.gaussian_filter(
        rng.normal(0.0, 1.0, (height, width)), sigma=2.5
    )
    boundary_noise = boundary_noise / (np.abs(boundary_noise).max() + 1e-9)

    for obj in objects:
        dr = rows - obj.center[0]
        dc = cols - obj.center[1]
        if obj.is_disk:
            # members of a proximal pair keep a crisper rim so the narrow
            # valley between them stays visible
            wobble = 0.7 if obj.clustered else 1.6
            inside = np.sqrt(dr * dr + dc * dc) <= obj.radius + wobble * boundary_noise
            color = LYMPH_RGB if obj.kind == "lymphocyte" else PALE_DISTRACTOR_RGB
        else:
            u = dr * math.sin(obj.angle) + dc * math.cos(obj.angle)
            v = -dr * math.cos(obj.angle) + dc * math.sin(obj.angle)
            inside = (u / obj.radius) ** 2 + (v / obj.minor) ** 2 <= 1.0 + 0.08 * boundary_noise
            color = ELONGATED_DISTRACTOR_RGB
        shade = rng.uniform(0.92, 1.08)
        for ch in range(3):
            canvas[..., ch][inside] = color[ch] * shade

    canvas = ndimage.gaussian_filter(canvas, sigma=(0.8, 0.8, 0.0))
    canvas += rng.normal(0.0, 4.0, canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
