"""Voxel-overlap loop closure and point registration for Lidar keyframes."""

from .geometry import (PointCloud, RigidTransform, Voxel, VoxelCloud,
                       apply_transform, compose, invert, nearest_neighbor,
                       voxelize)
from .overlap import (CloudOverlap, PairOverlap, cloud_overlap,
                      frames_overlapped, voxel_pair_overlap)
from .models import ModelDims, PipelineModel
from .loop import (ConstraintWriter, DetectorConfig, Keyframe, LoopConstraint,
                   LoopDetector, emit_constraints)
from .registration import (matrix_loss, distance_loss, register,
                           weighted_svd)
from .evaluation import evaluate, rotation_error, translation_error
from .synthetic import TrainingPair, generate_pair, make_dataset
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "RigidTransform", "Voxel", "VoxelCloud", "apply_transform",
    "compose", "invert", "nearest_neighbor", "voxelize",
    "CloudOverlap", "PairOverlap", "cloud_overlap", "frames_overlapped",
    "voxel_pair_overlap",
    "ModelDims", "PipelineModel",
    "ConstraintWriter", "DetectorConfig", "Keyframe", "LoopConstraint",
    "LoopDetector", "emit_constraints",
    "matrix_loss", "distance_loss", "register", "weighted_svd",
    "evaluate", "rotation_error", "translation_error",
    "TrainingPair", "generate_pair", "make_dataset",
    "TrainConfig", "train",
    "__version__",
]
