"""KITTI dataset ingestion.

Velodyne scans are flat binary files of N x 4 little-endian float32
(x, y, z, intensity).  Ground-truth poses come as rows of 12 values
(3x4 row-major matrices).  GPS fixes can serve as ground truth for raw
sequences via a local tangent-plane projection.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .geometry import PointCloud, Pose

log = logging.getLogger(__name__)


class ScanFormatError(ValueError):
    pass


@dataclass
class DatasetSequence:
    scan_paths: List[str]
    timestamps: List[float]
    ground_truth: Optional[List[Pose]] = None
    ground_truth_timestamps: Optional[List[float]] = None

    def __post_init__(self):
        if len(self.scan_paths) != len(self.timestamps):
            raise ValueError("scan_paths and timestamps length mismatch")
        ts = np.asarray(self.timestamps)
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.ground_truth is not None:
            gt_ts = self.ground_truth_timestamps
            if gt_ts is not None and len(gt_ts) != len(self.ground_truth):
                raise ValueError("ground truth and its timestamps differ in length")

    def __len__(self) -> int:
        return len(self.scan_paths)


def load_kitti_scan(path: str, timestamp: float = 0.0) -> PointCloud:
    """Read one velodyne .bin scan; intensity is discarded."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise ScanFormatError(
            f"{path}: size {raw.size * 4} bytes is not a multiple of 16")
    pts = raw.reshape(-1, 4)[:, :3].astype(np.float64)
    finite = np.isfinite(pts).all(axis=1)
    dropped = int(len(pts) - finite.sum())
    if dropped:
        log.warning("%s: dropped %d non-finite points", path, dropped)
        pts = pts[finite]
    return PointCloud(pts, None, timestamp, frame_id=os.path.basename(path))


def load_kitti_poses(path: str) -> List[Pose]:
    """Ground-truth poses from 12-value rows (3x4 row-major matrices)."""
    data = np.loadtxt(path).reshape(-1, 12)
    poses = []
    for row in data:
        m = row.reshape(3, 4)
        poses.append(Pose(m[:, :3], m[:, 3]))
    return poses


def load_timestamps(path: str) -> List[float]:
    """times.txt: one float (seconds) per line."""
    return [float(x) for x in np.atleast_1d(np.loadtxt(path))]


def discover_sequence(dataset_dir: str) -> DatasetSequence:
    """Assemble a sequence from a KITTI-odometry-style directory.

    Expects ``velodyne/*.bin`` (sorted), ``times.txt``, and optionally
    ``poses.txt`` with one 12-value row per scan.
    """
    velo = os.path.join(dataset_dir, "velodyne")
    if not os.path.isdir(velo):
        raise FileNotFoundError(f"no velodyne directory under {dataset_dir}")
    scans = sorted(os.path.join(velo, f) for f in os.listdir(velo)
                   if f.endswith(".bin"))
    if not scans:
        raise FileNotFoundError(f"no .bin scans under {velo}")
    times_path = os.path.join(dataset_dir, "times.txt")
    if os.path.exists(times_path):
        times = load_timestamps(times_path)
        if len(times) < len(scans):
            raise ValueError("times.txt has fewer entries than scans")
        times = times[:len(scans)]
    else:
        times = [0.1 * i for i in range(len(scans))]
    gt = None
    gt_times = None
    poses_path = os.path.join(dataset_dir, "poses.txt")
    if os.path.exists(poses_path):
        gt = load_kitti_poses(poses_path)
        gt_times = times[:len(gt)]
    return DatasetSequence(scans, times, gt, gt_times)


_EARTH_RADIUS = 6_378_137.0


def latlon_to_enu(lat: np.ndarray, lon: np.ndarray, alt: np.ndarray,
                  origin: Optional[np.ndarray] = None) -> np.ndarray:
    """GPS fixes to local east-north-up meters, tangent plane at ``origin``.

    ``origin`` defaults to the first fix.  Adequate for trajectory-scale
    extents (a few km); not a full geodetic conversion.
    """
    lat = np.radians(np.asarray(lat, dtype=np.float64))
    lon = np.radians(np.asarray(lon, dtype=np.float64))
    alt = np.asarray(alt, dtype=np.float64)
    if origin is None:
        lat0, lon0, alt0 = lat.flat[0], lon.flat[0], alt.flat[0]
    else:
        lat0, lon0, alt0 = (np.radians(origin[0]), np.radians(origin[1]),
                            origin[2])
    east = (lon - lon0) * np.cos(lat0) * _EARTH_RADIUS
    north = (lat - lat0) * _EARTH_RADIUS
    up = alt - alt0
    return np.column_stack([east, north, up])
