"""Video-level multi-modal single-object tracking with temporal token
propagation, built on an in-package autodiff core."""

from .boxes import BoundingBox, giou, iou
from .config import ModelConfig, TrackerConfig, TrainConfig
from .model import TrackModel, build_model, load_model, save_model

__all__ = [
    "BoundingBox",
    "giou",
    "iou",
    "ModelConfig",
    "TrackerConfig",
    "TrainConfig",
    "TrackModel",
    "build_model",
    "load_model",
    "save_model",
]

__version__ = "0.1.0"
