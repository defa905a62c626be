"""Ground-plane extraction.

Planar mode: clip by height, discard points with non-vertical normals, then
RANSAC plane fit refined by total least squares.  Rough-terrain mode: clip
by horizontal distance from the sensor and fit a single least-squares plane.
Coefficients follow a*x + b*y + c*z + d = 0 with (a, b, c) unit length and
c > 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import PointCloud, estimate_normals

MODE_PLANAR = "PLANAR"
MODE_ROUGH = "ROUGH"


@dataclass
class FloorCoefficients:
    a: float
    b: float
    c: float
    d: float
    timestamp: float = 0.0
    mode: str = MODE_PLANAR
    valid: bool = True

    @property
    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return pts @ self.normal + self.d


@dataclass
class FloorConfig:
    mode: str = MODE_PLANAR
    clip_min_z: float = -2.5
    clip_max_z: float = -1.0
    normal_vertical_max_angle: float = np.deg2rad(20.0)
    ransac_iterations: int = 200
    ransac_inlier_threshold: float = 0.1
    min_inlier_fraction: float = 0.3
    rough_clip_radius: float = 3.0
    normal_knn: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.clip_min_z >= self.clip_max_z:
            raise ValueError("clip_min_z must be below clip_max_z")
        if not 0.0 < self.normal_vertical_max_angle < np.pi / 2:
            raise ValueError("normal_vertical_max_angle must be in (0, pi/2)")
        if self.ransac_inlier_threshold <= 0 or self.rough_clip_radius <= 0:
            raise ValueError("thresholds must be positive")


def fit_plane_lsq(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Total least-squares plane: unit normal (c > 0) and offset d."""
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, 0]
    if n[2] < 0 or (n[2] == 0 and (n[0] < 0 or (n[0] == 0 and n[1] < 0))):
        n = -n
    d = -float(n @ centroid)
    return n, d


def _invalid(timestamp: float, mode: str) -> FloorCoefficients:
    return FloorCoefficients(0.0, 0.0, 1.0, 0.0, timestamp, mode, valid=False)


def detect_floor_planar(cloud: PointCloud,
                        cfg: Optional[FloorConfig] = None) -> FloorCoefficients:
    """Clip, normal-filter, and RANSAC-fit the ground plane."""
    cfg = cfg or FloorConfig()
    z = cloud.points[:, 2]
    clipped = cloud.points[(z >= cfg.clip_min_z) & (z <= cfg.clip_max_z)]
    if len(clipped) < max(3, cfg.normal_knn):
        return _invalid(cloud.timestamp, MODE_PLANAR)

    with_normals = estimate_normals(PointCloud(clipped), k=cfg.normal_knn)
    nz = with_normals.normals[:, 2]
    cos_max = np.cos(cfg.normal_vertical_max_angle)
    vertical = nz >= cos_max
    vertical &= np.isfinite(nz)
    candidates = clipped[vertical]
    if len(candidates) < max(50, cfg.normal_knn):
        # near structures the slab degenerates into mixed floor/wall strips
        # whose local normals are unreliable; fall back to all clipped
        # points and let the axis-constrained model fit sort them out
        candidates = clipped

    rng = np.random.default_rng(cfg.seed)
    best_count = 0
    best_inliers = None
    n_pts = len(candidates)
    for _ in range(cfg.ransac_iterations):
        sample = candidates[rng.choice(n_pts, size=3, replace=False)]
        v1 = sample[1] - sample[0]
        v2 = sample[2] - sample[0]
        normal = np.cross(v1, v2)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        if normal[2] < 0:
            normal = -normal
        if normal[2] < cos_max:        # candidate plane is not ground-like
            continue
        d = -normal @ sample[0]
        dist = np.abs(candidates @ normal + d)
        count = int((dist <= cfg.ransac_inlier_threshold).sum())
        if count > best_count:
            best_count = count
            best_inliers = dist <= cfg.ransac_inlier_threshold

    if best_inliers is None or best_count < n_pts * cfg.min_inlier_fraction:
        return _invalid(cloud.timestamp, MODE_PLANAR)

    n, d = fit_plane_lsq(candidates[best_inliers])
    if n[2] < cos_max:
        return _invalid(cloud.timestamp, MODE_PLANAR)
    return FloorCoefficients(n[0], n[1], n[2], d, cloud.timestamp, MODE_PLANAR,
                             valid=True)


def detect_floor_rough(cloud: PointCloud,
                       cfg: Optional[FloorConfig] = None) -> FloorCoefficients:
    """Least-squares plane over points near the sensor (rough terrain)."""
    cfg = cfg or FloorConfig()
    horiz = np.linalg.norm(cloud.points[:, :2], axis=1)
    near = cloud.points[horiz <= cfg.rough_clip_radius]
    if len(near) < 3:
        return _invalid(cloud.timestamp, MODE_ROUGH)
    n, d = fit_plane_lsq(near)
    rms = float(np.sqrt(np.mean((near @ n + d) ** 2)))
    valid = rms <= 2.0 * cfg.ransac_inlier_threshold
    return FloorCoefficients(n[0], n[1], n[2], d, cloud.timestamp, MODE_ROUGH,
                             valid=valid)


def detect_floor(cloud: PointCloud,
                 cfg: Optional[FloorConfig] = None) -> FloorCoefficients:
    cfg = cfg or FloorConfig()
    if cfg.mode == MODE_ROUGH:
        return detect_floor_rough(cloud, cfg)
    return detect_floor_planar(cloud, cfg)
