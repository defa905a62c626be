"""Cloud pre-filtering: voxel-grid downsampling and radius outlier removal.

Outlier removal optionally fans out over four spatial partitions (octant
pairs) in parallel; partitions are padded at their boundaries so the result
is identical to filtering the whole cloud at once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import KdTree, PointCloud

DOWNSAMPLE_VOXELGRID = "VOXELGRID"
DOWNSAMPLE_NONE = "NONE"
OUTLIER_RADIUS = "RADIUS"
OUTLIER_NONE = "NONE"


@dataclass
class PrefilterConfig:
    downsample_method: str = DOWNSAMPLE_VOXELGRID
    downsample_resolution: float = 0.25
    outlier_method: str = OUTLIER_RADIUS
    radius: float = 0.4
    min_neighbors: int = 2
    parallel: bool = True

    def __post_init__(self):
        if self.downsample_resolution <= 0:
            raise ValueError("downsample_resolution must be positive")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.min_neighbors < 1:
            raise ValueError("min_neighbors must be >= 1")


def voxel_downsample(cloud: PointCloud, resolution: float) -> PointCloud:
    """Replace all points of each occupied voxel by their centroid.

    The grid is axis-aligned with side ``resolution`` and anchored at the
    origin; voxel keys use floor division so negative coordinates land in
    the correct cell.  Output order follows first occurrence of each voxel.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)), None, cloud.timestamp, cloud.frame_id)
    keys3 = np.floor(cloud.points / resolution).astype(np.int64)
    # pack the 3 cell indices into one int64 (21 bits each, offset to
    # non-negative): one flat sort instead of a lexicographic row sort
    offset = 1 << 20
    if np.any(np.abs(keys3) >= offset):
        raise ValueError("cloud extent too large for this voxel resolution")
    keys = ((keys3[:, 0] + offset) << 42) | ((keys3[:, 1] + offset) << 21) \
        | (keys3[:, 2] + offset)
    _, first_idx, inverse = np.unique(keys, return_index=True,
                                      return_inverse=True)
    n_voxels = len(first_idx)
    sums = np.zeros((n_voxels, 3))
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=n_voxels).astype(np.float64)
    centroids = sums / counts[:, None]
    order = np.argsort(first_idx, kind="stable")
    return PointCloud(centroids[order], None, cloud.timestamp, cloud.frame_id)


def _neighbor_counts(owned: np.ndarray, reference: np.ndarray,
                     radius: float) -> np.ndarray:
    """Neighbors of each owned point among reference points (self included)."""
    tree = KdTree(reference)
    return tree.radius_counts(owned, radius)


def remove_outliers(cloud: PointCloud, radius: float, min_neighbors: int,
                    parallel: bool = True) -> PointCloud:
    """Keep points having >= min_neighbors other points within radius.

    Neighbor counts are always taken over the full cloud; the 4-way spatial
    partitioning is purely an execution strategy.  Retained points keep
    their coordinates and relative order.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if min_neighbors < 1:
        raise ValueError("min_neighbors must be >= 1")
    n = len(cloud)
    if n == 0:
        return PointCloud(np.empty((0, 3)), None, cloud.timestamp, cloud.frame_id)

    pts = cloud.points
    if not parallel or n < 4096:
        counts = _neighbor_counts(pts, pts, radius)
        keep = counts - 1 >= min_neighbors
    else:
        # Octants paired across the z plane -> 4 partitions keyed by the
        # signs of x and y.  Each partition's reference set is padded with
        # every point within `radius` of its quadrant so boundary counts
        # match the whole-cloud counts exactly.
        x, y = pts[:, 0], pts[:, 1]
        part = (x >= 0).astype(np.int8) * 2 + (y >= 0).astype(np.int8)
        keep = np.empty(n, dtype=bool)
        jobs = []
        for pid in range(4):
            owned_mask = part == pid
            if not np.any(owned_mask):
                continue
            sx = 1.0 if pid >= 2 else -1.0
            sy = 1.0 if pid % 2 == 1 else -1.0
            dx = np.maximum(0.0, -sx * x)   # distance to the quadrant in x
            dy = np.maximum(0.0, -sy * y)
            ref_mask = (dx <= radius) & (dy <= radius)
            jobs.append((owned_mask, pts[owned_mask], pts[ref_mask]))
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = pool.map(
                lambda j: _neighbor_counts(j[1], j[2], radius), jobs)
            for (owned_mask, _, _), counts in zip(jobs, results):
                keep[owned_mask] = counts - 1 >= min_neighbors
    return PointCloud(pts[keep], None, cloud.timestamp, cloud.frame_id)


def prefilter(cloud: PointCloud, cfg: PrefilterConfig) -> PointCloud:
    """Downsample then remove outliers, per the configured methods."""
    out = cloud
    if cfg.downsample_method == DOWNSAMPLE_VOXELGRID:
        out = voxel_downsample(out, cfg.downsample_resolution)
    if cfg.outlier_method == OUTLIER_RADIUS:
        out = remove_outliers(out, cfg.radius, cfg.min_neighbors,
                              parallel=cfg.parallel)
    return PointCloud(out.points, out.normals, cloud.timestamp, cloud.frame_id)
