"""Bundle of all trainable parts plus frame-level convenience passes.

One PipelineModel owns the feature provider, the overlap head, and the
registration transformer; they are trained jointly and ship in a single
checkpoint whose metadata records the architecture so loading rebuilds
the exact shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .errors import FormatError
from .features import FeatureProvider, FeatureSet, FrameDescriptors, compute_descriptors
from .geometry import PointCloud, RigidTransform, voxelize
from .layers import assign_parameters, load_checkpoint, save_checkpoint
from .overlap_net import OverlapHead, OverlapPrediction, predict_overlap
from .registration import (Correspondences, MatchedVoxelPairs,
                           RegistrationModel, register_forward,
                           select_matched_pairs)
from .autodiff import Tensor


@dataclass(frozen=True)
class ModelDims:
    """Architecture knobs; desk-scale defaults."""

    voxel_dim: int = 32
    point_dim: int = 16
    hidden_dim: int = 64
    model_dim: int = 32
    heads: int = 4
    point_budget: int = 64
    density_radius: float = 0.5
    pair_term: str = "elementwise"


class PipelineModel:
    """Feature provider + overlap head + registration transformer."""

    def __init__(self, dims: ModelDims, seed: int = 0):
        self.dims = dims
        self.seed = seed
        rng = np.random.default_rng([seed, 20240601])
        self.features = FeatureProvider(dims.voxel_dim, dims.point_dim,
                                        dims.hidden_dim, dims.point_budget,
                                        rng, dims.density_radius)
        self.overlap_head = OverlapHead(dims.voxel_dim, dims.hidden_dim, rng,
                                        dims.pair_term)
        self.registration = RegistrationModel(dims.voxel_dim, dims.point_dim,
                                              dims.model_dim, dims.heads, rng)

    def parameters(self) -> dict[str, Tensor]:
        out = self.features.parameters("features")
        out.update(self.overlap_head.parameters("overlap"))
        out.update(self.registration.parameters("registration"))
        return out

    # frame-level passes -------------------------------------------------

    def describe_frame(self, cloud: PointCloud, voxel_size: float,
                       sample_seed: int = 0):
        """Voxelize a frame and compute its cacheable descriptors."""
        voxels = voxelize(cloud, voxel_size)
        desc = compute_descriptors(cloud, voxels, self.dims.point_budget,
                                   self.dims.density_radius, sample_seed)
        return voxels, desc

    def embed(self, desc: FrameDescriptors) -> FeatureSet:
        return self.features.embed(desc)

    def predict_frame_overlap(self, feats_s: FeatureSet, feats_k: FeatureSet,
                              th: float) -> OverlapPrediction:
        return predict_overlap(self.overlap_head, feats_s.voxel_features,
                               feats_k.voxel_features, th)

    def register_pair(self, feats_s: FeatureSet, feats_k: FeatureSet,
                      o_hat, pairing_threshold: float,
                      max_pairs: int) -> tuple[RigidTransform, Correspondences,
                                               MatchedVoxelPairs]:
        pairs = select_matched_pairs(o_hat, feats_s, feats_k,
                                     pairing_threshold, max_pairs)
        result = register_forward(self.registration, feats_s, feats_k, pairs)
        return result.transform(), result.correspondences, pairs

    # checkpointing ------------------------------------------------------

    def save(self, path, extra_meta: dict[str, str] | None = None) -> None:
        meta = {k: str(v) for k, v in asdict(self.dims).items()}
        meta["seed"] = str(self.seed)
        meta.update(extra_meta or {})
        save_checkpoint(path, self.parameters(), meta)

    @staticmethod
    def load(path) -> "PipelineModel":
        values, meta = load_checkpoint(path)
        try:
            dims = ModelDims(
                voxel_dim=int(meta["voxel_dim"]),
                point_dim=int(meta["point_dim"]),
                hidden_dim=int(meta["hidden_dim"]),
                model_dim=int(meta["model_dim"]),
                heads=int(meta["heads"]),
                point_budget=int(meta["point_budget"]),
                density_radius=float(meta["density_radius"]),
                pair_term=meta["pair_term"],
            )
            seed = int(meta.get("seed", "0"))
        except KeyError as exc:
            raise FormatError(f"checkpoint metadata missing {exc}") from exc
        model = PipelineModel(dims, seed)
        assign_parameters(model.parameters(), values)
        return model
