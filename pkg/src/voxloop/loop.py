"""Keyframe database and the two-stage loop detection procedure.

Every N-th incoming frame becomes a keyframe (voxelized and described at
push time). For a current keyframe, candidates are historic keyframes
that are close by odometry but outside the recent stretch of trajectory;
each candidate is filtered first by estimated cloud overlap and then by
the translation norm of the registered transform, and survivors are
emitted as loop constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateGeometry, NoMatches, NotConfigured, OrderError,
                     Underdetermined)
from .features import FeatureSet, FrameDescriptors
from .geometry import PointCloud, RigidTransform, VoxelCloud
from .models import PipelineModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    """Loop-detection thresholds; defaults follow the detection procedure."""

    keyframe_stride: int = 2          # N: keep every N-th frame
    far_radius: float = 5.0           # d_f, meters by odometry
    recent_arclength: float = 20.0    # d_h, meters of trajectory to skip
    overlap_threshold: float = 0.5    # O_th on estimated cloud overlap
    translation_threshold: float = 3.0  # d_th, meters on |t_hat|
    voxel_size: float = 0.5
    pair_threshold: float = 0.1       # th inside the overlap estimate
    pairing_threshold: float = 0.1    # min o_hat for registration pairs
    max_pairs: int = 32

    def __post_init__(self):
        if self.keyframe_stride < 1:
            raise ValueError("keyframe_stride must be >= 1")
        for name in ("far_radius", "recent_arclength", "overlap_threshold",
                     "translation_threshold", "voxel_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Keyframe:
    id: int
    cloud: PointCloud
    voxels: VoxelCloud
    descriptors: FrameDescriptors
    odom_pose: RigidTransform
    trajectory_arclength: float


@dataclass(frozen=True)
class LoopConstraint:
    """One detected loop: ids, relative transform (current -> matched
    keyframe coordinates), and the estimated overlap that admitted it."""

    current_id: int
    matched_id: int
    relative_transform: RigidTransform
    overlap_score: float


class LoopDetector:
    """Algorithmic core: keyframe store, candidate pruning, two filters.

    push_frame is single-writer; detect only reads the database and the
    frozen model, so scoring candidates is safe to parallelize.
    """

    def __init__(self, model: PipelineModel | None, config: DetectorConfig):
        self.model = model
        self.config = config
        self.keyframes: list[Keyframe] = []
        self._next_frame_id = 0
        self._arclength = 0.0
        self._last_position: np.ndarray | None = None
        self._embed_cache: dict[int, FeatureSet] = {}

    def push_frame(self, frame_id: int, cloud: PointCloud,
                   odom_pose: RigidTransform) -> Keyframe | None:
        """Record a frame; every N-th one becomes a keyframe."""
        if frame_id != self._next_frame_id:
            raise OrderError(
                f"expected frame {self._next_frame_id}, got {frame_id}")
        self._next_frame_id += 1
        position = odom_pose.translation
        if self._last_position is not None:
            self._arclength += float(np.linalg.norm(position - self._last_position))
        self._last_position = position
        if frame_id % self.config.keyframe_stride != 0:
            return None
        if self.model is None:
            raise NotConfigured("a model is required to featurize keyframes")
        voxels, desc = self.model.describe_frame(cloud, self.config.voxel_size,
                                                 sample_seed=frame_id)
        kf = Keyframe(frame_id, cloud, voxels, desc, odom_pose, self._arclength)
        self.keyframes.append(kf)
        return kf

    def remove_far_frames(self, current: Keyframe) -> list[Keyframe]:
        """Candidates: within d_f by odometry, beyond d_h along the path."""
        out = []
        for kf in self.keyframes:
            if kf.id == current.id:
                continue
            gap = current.trajectory_arclength - kf.trajectory_arclength
            if gap <= self.config.recent_arclength:
                continue
            dist = np.linalg.norm(kf.odom_pose.translation
                                  - current.odom_pose.translation)
            if dist < self.config.far_radius:
                out.append(kf)
        return out

    def _embedded(self, kf: Keyframe) -> FeatureSet:
        cached = self._embed_cache.get(kf.id)
        if cached is None:
            cached = self.model.embed(kf.descriptors)
            self._embed_cache[kf.id] = cached
        return cached

    def detect(self, current: Keyframe) -> list[LoopConstraint]:
        """Run the overlap filter then the registration filter."""
        if self.model is None:
            raise NotConfigured("loop detection needs a trained model")
        cfg = self.config
        constraints: list[LoopConstraint] = []
        feats_cur = self._embedded(current)
        for cand in self.remove_far_frames(current):
            feats_cand = self._embedded(cand)
            pred = self.model.predict_frame_overlap(feats_cur, feats_cand,
                                                    cfg.pair_threshold)
            if pred.cloud_value <= cfg.overlap_threshold:
                continue
            try:
                estimate, _, _ = self.model.register_pair(
                    feats_cur, feats_cand, pred.o_hat,
                    cfg.pairing_threshold, cfg.max_pairs)
            except (NoMatches, Underdetermined, DegenerateGeometry) as exc:
                log.warning("registration skipped for (%d, %d): %s",
                            current.id, cand.id, exc)
                continue
            if np.linalg.norm(estimate.translation) < cfg.translation_threshold:
                constraints.append(LoopConstraint(
                    current.id, cand.id, estimate, pred.cloud_value))
        return constraints

    def process(self, frame_id: int, cloud: PointCloud,
                odom_pose: RigidTransform) -> list[LoopConstraint]:
        """push_frame + detect for the frames that became keyframes."""
        kf = self.push_frame(frame_id, cloud, odom_pose)
        if kf is None:
            return []
        return self.detect(kf)


def format_constraint(c: LoopConstraint) -> str:
    values = " ".join(f"{v:.12g}" for v in c.relative_transform.as_matrix().ravel())
    return f"LOOP {c.current_id} {c.matched_id} {c.overlap_score:.6f} {values}"


class ConstraintWriter:
    """Append-only constraint sink, idempotent per (current, matched) pair."""

    def __init__(self, stream):
        self._stream = stream
        self._seen: set[tuple[int, int]] = set()

    def emit(self, constraints: list[LoopConstraint]) -> int:
        written = 0
        for c in constraints:
            key = (c.current_id, c.matched_id)
            if key in self._seen:
                continue
            self._seen.add(key)
            self._stream.write(format_constraint(c) + "\n")
            written += 1
        return written


def emit_constraints(sink: ConstraintWriter,
                     constraints: list[LoopConstraint]) -> int:
    return sink.emit(constraints)
