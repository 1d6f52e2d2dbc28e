"""Binary scan and pose-file readers following the KITTI odometry layout.

Scans are little-endian float32 quadruples (x, y, z, intensity); poses
are one row-major 3x4 transform per line. Near-orthonormal pose rotations
are projected to the closest proper rotation (public ground truth is
imprecise); anything beyond the 1e-3 tolerance is rejected.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .errors import EmptyInput, FormatError, InvalidPoint
from .geometry import PointCloud, RigidTransform

log = logging.getLogger(__name__)

_RECORD_BYTES = 16
_ORTHO_TOLERANCE = 1e-3


def read_scan(path) -> PointCloud:
    """Read one Velodyne-style .bin scan into a PointCloud."""
    size = os.path.getsize(path)
    if size == 0:
        raise EmptyInput(f"scan file is empty: {path}")
    if size % _RECORD_BYTES != 0:
        raise FormatError(
            f"scan size {size} is not a multiple of {_RECORD_BYTES}: {path}")
    raw = np.fromfile(path, dtype="<f4").reshape(-1, 4)
    bad = ~np.isfinite(raw).all(axis=1)
    if bad.any():
        raise InvalidPoint(int(np.flatnonzero(bad)[0]))
    data = raw.astype(np.float64)
    return PointCloud(data[:, :3], data[:, 3])


def write_scan(path, cloud: PointCloud) -> None:
    """Write a cloud in the same binary layout; float32, row order kept."""
    inten = cloud.intensity if cloud.intensity is not None else np.zeros(len(cloud))
    rec = np.column_stack([cloud.points, inten]).astype("<f4")
    rec.tofile(path)


def read_poses(path) -> list[RigidTransform]:
    """Parse a KITTI pose file: 12 reals per line, row-major [R | t].

    Rotations within 1e-3 of orthonormal are projected onto SO(3) via
    SVD (logged when the deviation is more than numerical noise); worse
    ones raise FormatError with the line number.
    """
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split()
            if len(fields) != 12:
                raise FormatError(f"expected 12 fields, got {len(fields)}",
                                  line=lineno)
            try:
                values = np.array([float(f) for f in fields])
            except ValueError:
                raise FormatError("non-numeric pose entry", line=lineno)
            m = values.reshape(3, 4)
            r = m[:, :3]
            deviation = np.abs(r.T @ r - np.eye(3)).max()
            if deviation > _ORTHO_TOLERANCE or np.linalg.det(r) <= 0:
                raise FormatError(
                    f"rotation deviates from orthonormal by {deviation:.2e}",
                    line=lineno)
            if deviation > 1e-9:
                log.warning("pose line %d re-orthonormalized (deviation %.2e)",
                            lineno, deviation)
            u, _, vt = np.linalg.svd(r)
            r = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
            poses.append(RigidTransform(r, m[:, 3]))
    if not poses:
        raise EmptyInput(f"pose file has no entries: {path}")
    return poses


def write_poses(path, poses: list[RigidTransform]) -> None:
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(" ".join(f"{v:.17g}" for v in pose.as_matrix().ravel()))
            fh.write("\n")
