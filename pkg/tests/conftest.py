import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def write_synth_dataset(directory, n_scenes, dims=(96, 96), n_lymph=2, n_distractor=0, seed=0, clustering=0.0):
    """Write a dataset directory (images/ + annotations.jsonl) of synthetic scenes."""
    from lymphodetect.annotations import write_records
    from lymphodetect.raster import write_image
    from lymphodetect.synthetic import generate_scene

    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    scenes = []
    for i in range(n_scenes):
        scene = generate_scene(dims, n_lymph, n_distractor, clustering=clustering, rng=rng)
        fov_id = f"scene{i:03d}"
        write_image(os.path.join(directory, "images", f"{fov_id}.png"), scene.image)
        ann = scene.annotations
        for point in ann.positive_points:
            records.append({"fov_id": fov_id, "kind": "PP", "points": [point]})
        for point in ann.negative_points:
            records.append({"fov_id": fov_id, "kind": "NP", "points": [point]})
        for stroke in ann.negative_scribbles:
            records.append({"fov_id": fov_id, "kind": "NS", "points": stroke})
        scenes.append(scene)
    write_records(os.path.join(directory, "annotations.jsonl"), records)
    return scenes


@pytest.fixture
def tiny_checkpoint(tmp_path):
    """A small untrained checkpoint directory usable for service/CLI plumbing."""
    from lymphodetect import model as fcn

    params = fcn.init_params(fcn.NetworkConfig(base_channels=4, scales=2), rng_seed=0)
    path = tmp_path / "tiny_model"
    fcn.save_checkpoint(params, path)
    return str(path)
