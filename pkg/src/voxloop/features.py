"""Per-voxel and per-point feature vectors for the learned pipeline.

The handcrafted pre-MLP descriptors are built only from geometry relative
to each voxel (covariance spectrum, spans, local density), which is what
gives the pipeline its robustness to the yaw-plus-translation motions a
ground vehicle produces. Trainable MLPs then map the descriptors into the
embedding spaces consumed by the overlap head and the registration
transformer. Voxel features come out L2-normalized, as the similarity map
requires.

Descriptor extraction is a pure numpy pass and is separated from the MLP
embedding so training loops can cache descriptors per frame and re-embed
cheaply each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .autodiff import Tensor, l2_normalize, matmul
from .errors import InputMismatch
from .geometry import PointCloud, VoxelCloud
from .layers import MLP

CELL_DESCRIPTOR_DIM = 9
NEIGHBORHOOD_RADII = (0.8, 1.6, 2.6)
VOXEL_DESCRIPTOR_DIM = CELL_DESCRIPTOR_DIM + 1 + 9 * len(NEIGHBORHOOD_RADII)
POINT_DESCRIPTOR_DIM = 4

# Fixed per-component scales bringing the raw descriptors to O(1) inputs;
# eigenvalues of sub-voxel covariances are tiny in m^2, counts are logs.
_CELL_SCALE = np.array([0.4, 30.0, 60.0, 120.0, 1.0, 1.0, 1.0, 2.0, 4.0])
_BALL_SCALE = np.array([0.4, 3.0, 6.0, 12.0, 1.0, 1.0, 1.0, 1.2, 2.0])
_VOXEL_DESC_SCALE = np.concatenate(
    [_CELL_SCALE, [0.5]] + [_BALL_SCALE] * len(NEIGHBORHOOD_RADII))
_POINT_DESC_SCALE = np.array([2.5, 2.5, 2.5, 0.4])


def voxel_descriptor(points: np.ndarray) -> np.ndarray:
    """Shape summary of a point set, built only from relative geometry.

    Components: log1p point count, covariance eigenvalues (descending),
    linearity, planarity, sphericity, height span, and the mean distance
    of points from their centroid. Degenerate sets (single point,
    collinear) stay finite: shape ratios fall back to zero when the
    leading eigenvalue vanishes.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / n
    eig = np.linalg.eigvalsh(cov)[::-1]
    eig = np.maximum(eig, 0.0)
    l1, l2, l3 = eig
    if l1 > 1e-15:
        linearity = (l1 - l2) / l1
        planarity = (l2 - l3) / l1
        sphericity = l3 / l1
    else:
        linearity = planarity = sphericity = 0.0
    height_span = pts[:, 2].max() - pts[:, 2].min()
    mean_offset = float(np.linalg.norm(centered, axis=1).mean())
    return np.array([
        np.log1p(n), l1, l2, l3, linearity, planarity, sphericity,
        height_span, mean_offset,
    ])


@dataclass
class FrameDescriptors:
    """Pre-MLP descriptors plus sampled raw geometry for one frame."""

    voxel_desc: np.ndarray   # (V, VOXEL_DESCRIPTOR_DIM)
    point_desc: np.ndarray   # (V, p, POINT_DESCRIPTOR_DIM)
    points: np.ndarray       # (V, p, 3) frame coordinates
    point_ids: np.ndarray    # (V, p) indices into the source cloud
    mask: np.ndarray         # (V, p) True on real slots, False on padding


@dataclass
class FeatureSet:
    """Embeddings plus the sampled raw geometry behind them.

    voxel_features:  (V, d_v) Tensor, unit-norm rows.
    point_features:  (V, p, d_p) Tensor.
    points:          (V, p, 3) sampled point coordinates, frame coords.
    point_ids:       (V, p) indices into the source cloud (pads repeat).
    mask:            (V, p) True on real slots, False on padding.
    """

    voxel_features: Tensor
    point_features: Tensor
    points: np.ndarray
    point_ids: np.ndarray
    mask: np.ndarray


def compute_descriptors(cloud: PointCloud, voxels: VoxelCloud,
                        point_budget: int, density_radius: float = 0.5,
                        sample_seed: int = 0) -> FrameDescriptors:
    """Handcrafted descriptors for every voxel and its sampled points.

    Voxels over the point budget are subsampled with a deterministic
    seeded draw; smaller voxels pad by repeating the point nearest the
    centroid, with padding flagged in the mask.
    """
    if voxels.source_points.shape != cloud.points.shape or not np.array_equal(
            voxels.source_points[0], cloud.points[0]):
        raise InputMismatch("voxel cloud was not derived from this cloud")

    tree = cKDTree(cloud.points)
    density = tree.query_ball_point(cloud.points, density_radius,
                                    return_length=True)
    density = np.log1p(density.astype(np.float64))

    nv, p = len(voxels), point_budget
    centroids = voxels.centroids()
    # Neighborhood-ball members per radius: the cell contents alone are
    # too sensitive to where the grid happens to slice the structure, so
    # the descriptor adds the same statistics over balls around the
    # centroid (and the centroid height), which survive a re-gridding.
    ball_members = [tree.query_ball_point(centroids, r)
                    for r in NEIGHBORHOOD_RADII]

    vox_desc = np.empty((nv, VOXEL_DESCRIPTOR_DIM))
    pts = np.empty((nv, p, 3))
    ids = np.empty((nv, p), dtype=np.int64)
    mask = np.zeros((nv, p), dtype=bool)
    point_desc = np.empty((nv, p, POINT_DESCRIPTOR_DIM))
    for vi in range(nv):
        member_idx = voxels.voxels[vi].point_indices
        member = cloud.points[member_idx]
        parts = [voxel_descriptor(member), [centroids[vi, 2]]]
        for members in ball_members:
            parts.append(voxel_descriptor(cloud.points[members[vi]]))
        vox_desc[vi] = np.concatenate(parts)
        chosen = _sample_budget(member_idx, member, voxels.voxels[vi].centroid,
                                p, sample_seed, vi)
        ids[vi] = chosen
        mask[vi, :min(len(member_idx), p)] = True
        pts[vi] = cloud.points[chosen]
        point_desc[vi, :, :3] = pts[vi] - voxels.voxels[vi].centroid
        point_desc[vi, :, 3] = density[chosen]
    return FrameDescriptors(vox_desc, point_desc, pts, ids, mask)


class FeatureProvider:
    """Descriptor + MLP stand-in for a learned hierarchical encoder."""

    def __init__(self, voxel_dim: int, point_dim: int, hidden_dim: int,
                 point_budget: int, rng: np.random.Generator,
                 density_radius: float = 0.5):
        self.voxel_dim = voxel_dim
        self.point_dim = point_dim
        self.point_budget = point_budget
        self.density_radius = density_radius
        self.voxel_mlp = MLP([VOXEL_DESCRIPTOR_DIM, hidden_dim, voxel_dim], rng)
        self.point_mlp = MLP([POINT_DESCRIPTOR_DIM, hidden_dim, point_dim], rng)
        # Fixed (non-trainable) projection mixed into the voxel features.
        # It pins descriptor information into the embedding so no loss
        # gradient can collapse the feature space; it regenerates
        # deterministically from the construction seed.
        self.voxel_skip = Tensor(rng.uniform(
            -1.0, 1.0, (VOXEL_DESCRIPTOR_DIM, voxel_dim))
            / np.sqrt(VOXEL_DESCRIPTOR_DIM))

    def parameters(self, prefix: str = "features") -> dict[str, Tensor]:
        out = self.voxel_mlp.parameters(f"{prefix}.voxel_mlp")
        out.update(self.point_mlp.parameters(f"{prefix}.point_mlp"))
        return out

    def embed(self, desc: FrameDescriptors) -> FeatureSet:
        """Run the trainable MLPs over precomputed descriptors."""
        vox_in = Tensor(desc.voxel_desc * _VOXEL_DESC_SCALE)
        voxel_features = l2_normalize(
            self.voxel_mlp(vox_in) + matmul(vox_in, self.voxel_skip))
        point_features = self.point_mlp(
            Tensor(desc.point_desc * _POINT_DESC_SCALE))
        return FeatureSet(voxel_features, point_features, desc.points,
                          desc.point_ids, desc.mask)

    def describe(self, cloud: PointCloud, voxels: VoxelCloud,
                 sample_seed: int = 0) -> FeatureSet:
        return self.embed(compute_descriptors(
            cloud, voxels, self.point_budget, self.density_radius, sample_seed))


def _sample_budget(member_idx: np.ndarray, member: np.ndarray,
                   centroid: np.ndarray, budget: int,
                   seed: int, voxel_index: int) -> np.ndarray:
    n = len(member_idx)
    if n >= budget:
        rng = np.random.default_rng([seed, voxel_index])
        pick = rng.choice(n, size=budget, replace=False)
        return member_idx[np.sort(pick)]
    nearest = int(np.argmin(np.linalg.norm(member - centroid, axis=1)))
    pad = np.full(budget - n, member_idx[nearest], dtype=np.int64)
    return np.concatenate([member_idx, pad])
