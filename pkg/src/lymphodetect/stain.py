"""H&E stain normalization by channel-statistics matching in CIELAB.

Training and inference must see the same color distribution, so a reference
(per-channel Lab mean and standard deviation) is fitted once on a designated
FOV and stored with the model checkpoint. Normalizing maps each Lab channel
through the affine transform that matches the reference statistics, then
converts back to RGB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from skimage import color

# Channels whose std falls below this pass through as a pure mean shift.
STD_EPS = 1e-6


@dataclass(frozen=True)
class StainReference:
    """Per-channel Lab mean/std of the reference image."""

    means: tuple[float, float, float]
    stds: tuple[float, float, float]

    def to_json(self) -> str:
        return json.dumps({"means": list(self.means), "stds": list(self.stds)})

    @classmethod
    def from_json(cls, text: str) -> "StainReference":
        data = json.loads(text)
        return cls(means=tuple(data["means"]), stds=tuple(data["stds"]))


def _to_lab(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {img.shape}")
    return color.rgb2lab(img.astype(np.float64) / 255.0)


def fit_reference(image: np.ndarray) -> StainReference:
    """Measure per-channel Lab statistics of an RGB image."""
    lab = _to_lab(image)
    means = lab.reshape(-1, 3).mean(axis=0)
    stds = lab.reshape(-1, 3).std(axis=0)
    return StainReference(means=tuple(map(float, means)), stds=tuple(map(float, stds)))


def normalize(image: np.ndarray, reference: StainReference) -> np.ndarray:
    """Match an RGB image's Lab channel statistics to the reference.

    Each channel gets the affine map (x - mean) * (ref_std / std) + ref_mean.
    When either std is ~0 the scale is held at 1 (mean shift only), so
    constant images map to the reference mean color instead of dividing by
    zero. Output is uint8, clipped to [0, 255]. Deterministic.
    """
    lab = _to_lab(image)
    means = lab.reshape(-1, 3).mean(axis=0)
    stds = lab.reshape(-1, 3).std(axis=0)
    out = np.empty_like(lab)
    for c in range(3):
        scale = 1.0
        if stds[c] > STD_EPS and reference.stds[c] > STD_EPS:
            scale = reference.stds[c] / stds[c]
        out[..., c] = (lab[..., c] - means[c]) * scale + reference.means[c]
    rgb = color.lab2rgb(out)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
