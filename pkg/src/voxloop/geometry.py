"""Points, rigid transforms, voxelization, and nearest-neighbor queries.

All coordinates are meters in float64. Types are immutable values after
construction and every operation here is pure, so concurrent use needs no
coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidPoint, NotARotation

_ORTHO_TOL = 1e-9


def _check_finite(points: np.ndarray) -> None:
    finite = np.isfinite(points).all(axis=-1)
    if not finite.all():
        raise InvalidPoint(int(np.flatnonzero(~finite)[0]))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: ``p -> rotation @ p + translation``.

    The rotation must be orthonormal with determinant +1 within 1e-9;
    construction rejects anything else.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise NotARotation("non-finite transform entries")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL:
            raise NotARotation("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise NotARotation("rotation determinant is not +1 within 1e-9")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(values: np.ndarray) -> "RigidTransform":
        """Build from a row-major 3x4 matrix (or flat 12-vector) [R | t]."""
        m = np.asarray(values, dtype=np.float64).reshape(3, 4)
        return RigidTransform(m[:, :3], m[:, 3])

    def as_matrix(self) -> np.ndarray:
        """Row-major 3x4 [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 3) array (or a single 3-vector)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def rotation_about_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_transform(rng: np.random.Generator,
                     max_translation: float = 5.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng),
                          rng.uniform(-max_translation, max_translation, 3))


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points with optional per-point intensity.

    Clouds entering the pipeline are never empty; construction enforces
    that and rejects non-finite coordinates.
    """

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise EmptyInput("point cloud is empty")
        _check_finite(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.intensity is not None:
            inten = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if inten.shape[0] != pts.shape[0]:
                raise InvalidPoint(0, "intensity length does not match points")
            inten.setflags(write=False)
            object.__setattr__(self, "intensity", inten)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class Voxel:
    """One occupied grid cell: centroid of its member points.

    ``point_indices`` index into the parent cloud; ``grid_key`` is the
    integer cell coordinate (floor of point / voxel_size per axis).
    """

    centroid: np.ndarray
    point_indices: np.ndarray
    grid_key: tuple[int, int, int]


@dataclass(frozen=True)
class VoxelCloud:
    """All occupied voxels of one frame plus the source points they index."""

    voxels: tuple[Voxel, ...]
    voxel_size: float
    source_points: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.voxels)

    def centroids(self) -> np.ndarray:
        return np.array([v.centroid for v in self.voxels])

    def voxel_points(self, index: int) -> np.ndarray:
        return self.source_points[self.voxels[index].point_indices]


def voxelize(cloud: PointCloud, voxel_size: float) -> VoxelCloud:
    """Partition a cloud into grid cells and average each cell's points.

    Grid keys are floor(coord / voxel_size) per axis, so the partition is
    deterministic and every point lands in exactly one voxel. There is no
    per-voxel point cap.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    keys = np.floor(pts / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    voxels = []
    for vi in range(len(uniq)):
        idx = order[bounds[vi]:bounds[vi + 1]]
        idx = np.sort(idx)
        idx.setflags(write=False)
        centroid = pts[idx].mean(axis=0)
        centroid.setflags(write=False)
        voxels.append(Voxel(centroid, idx, tuple(int(k) for k in uniq[vi])))
    return VoxelCloud(tuple(voxels), float(voxel_size), pts)


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    """Map every point p to R p + t; lengths and intensities are preserved."""
    return PointCloud(t.apply(cloud.points), cloud.intensity)


_LINEAR_SCAN_LIMIT = 256


def nearest_neighbor(query: np.ndarray, cloud: PointCloud,
                     radius_hint: float | None = None) -> tuple[int, float]:
    """Index and Euclidean distance of the closest cloud point.

    Ties break to the lowest index. Clouds below 256 points use a direct
    scan; larger clouds go through a hash grid whose cell size is the
    query radius hint (default 1 m), searched in expanding shells until
    the best candidate provably cannot be beaten.
    """
    q = np.asarray(query, dtype=np.float64).reshape(3)
    pts = cloud.points
    if len(pts) < _LINEAR_SCAN_LIMIT:
        return _scan(q, pts, np.arange(len(pts)))
    cell = float(radius_hint) if radius_hint and radius_hint > 0 else 1.0
    grid: dict[tuple[int, int, int], list[int]] = {}
    keys = np.floor(pts / cell).astype(np.int64)
    for i, k in enumerate(map(tuple, keys)):
        grid.setdefault(k, []).append(i)
    qk = tuple(np.floor(q / cell).astype(np.int64))
    best_idx, best_dist = -1, np.inf
    ring = 0
    max_ring = int(np.ceil(np.abs(pts - q).max() / cell)) + 1
    while ring <= max_ring:
        candidates: list[int] = []
        for k in _ring_keys(qk, ring):
            candidates.extend(grid.get(k, ()))
        if candidates:
            candidates.sort()
            idx, dist = _scan(q, pts, np.asarray(candidates))
            if dist < best_dist:
                best_idx, best_dist = idx, dist
        # Any point in a farther shell is at least (ring) * cell away.
        if best_idx >= 0 and best_dist <= ring * cell:
            break
        ring += 1
    return best_idx, best_dist


def _scan(q: np.ndarray, pts: np.ndarray, indices: np.ndarray) -> tuple[int, float]:
    if len(indices) == 0:
        raise EmptyInput("nearest_neighbor on empty cloud")
    d = np.linalg.norm(pts[indices] - q, axis=1)
    j = int(np.argmin(d))  # argmin keeps the first (lowest) index on ties
    return int(indices[j]), float(d[j])


def _ring_keys(center: tuple[int, int, int], ring: int):
    cx, cy, cz = center
    if ring == 0:
        yield center
        return
    for dx in range(-ring, ring + 1):
        for dy in range(-ring, ring + 1):
            for dz in range(-ring, ring + 1):
                if max(abs(dx), abs(dy), abs(dz)) == ring:
                    yield (cx + dx, cy + dy, cz + dz)
