"""Lymphocyte detection in H&E images from free-form annotations.

The pipeline: compile pathologist point/scribble annotations into per-pixel
label and weight maps, train an encoder-decoder FCN on augmented patches
with weighted cross-entropy, post-process probability maps into located
detections, and fine-tune from correction clicks collected during use.
"""

from .annotations import AnnotationSet, DatasetSplit, compile_maps, split_dataset, tile_fov
from .augment import TrainingPatch, mirror_pad, sample_patch
from .model import ModelParams, NetworkConfig, init_params, load_checkpoint, save_checkpoint
from .postprocess import Detection, PostprocessConfig, default_size_bounds, detect
from .raster import Region, connected_components, disk_dilate, region_moments
from .stain import StainReference, fit_reference, normalize
from .synthetic import SyntheticScene, generate_scene
from .training import (
    FineTuneJob,
    TrainState,
    finetune,
    schedule_lookup,
    train,
    weighted_cross_entropy,
)

__all__ = [
    "AnnotationSet",
    "DatasetSplit",
    "Detection",
    "FineTuneJob",
    "ModelParams",
    "NetworkConfig",
    "PostprocessConfig",
    "Region",
    "StainReference",
    "SyntheticScene",
    "TrainState",
    "TrainingPatch",
    "compile_maps",
    "connected_components",
    "default_size_bounds",
    "detect",
    "disk_dilate",
    "finetune",
    "fit_reference",
    "generate_scene",
    "init_params",
    "load_checkpoint",
    "mirror_pad",
    "normalize",
    "region_moments",
    "sample_patch",
    "save_checkpoint",
    "schedule_lookup",
    "split_dataset",
    "tile_fov",
    "train",
    "weighted_cross_entropy",
]
