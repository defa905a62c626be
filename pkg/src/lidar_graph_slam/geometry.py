"""Core geometric types: point clouds, SE(3) poses, k-NN search, normals.

Everything downstream (filtering, registration, graph optimization) is built
on the types in this module.  Pose math is always float64; raw point storage
may be float32 at ingestion and is promoted on first use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

@dataclass
class PointCloud:
    """A timestamped set of 3D points with optional per-point unit normals.

    ``normals`` rows with non-finite entries mark points whose normal could
    not be estimated (degenerate neighborhoods).
    """

    points: np.ndarray                      # (N, 3)
    normals: Optional[np.ndarray] = None    # (N, 3) unit vectors or NaN rows
    timestamp: float = 0.0
    frame_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normals length does not match points length")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def size(self) -> int:
        return len(self.points)

    def transformed(self, pose: "Pose") -> "PointCloud":
        """Return a copy with points (and normals) mapped into ``pose``'s frame."""
        pts = self.points @ pose.rotation.T + pose.translation
        nrm = None
        if self.normals is not None:
            nrm = self.normals @ pose.rotation.T
        return PointCloud(pts, nrm, self.timestamp, self.frame_id)


# ---------------------------------------------------------------------------
# SE(3) poses
# ---------------------------------------------------------------------------

def _hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3 orthonormal) plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Pose") -> "Pose":
        """Apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = pts @ self.rotation.T + self.translation
        return out[0] if np.ndim(points) == 1 else out

    def rotation_angle(self) -> float:
        """Magnitude of the rotation in radians, in [0, pi]."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def orthonormalized(self) -> "Pose":
        """Project the rotation back onto SO(3) (nearest by Frobenius norm)."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] = -u[:, -1]
            r = u @ vt
        return Pose(r, self.translation)

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return (np.allclose(r.T @ r, np.eye(3), atol=tol)
                and abs(np.linalg.det(r) - 1.0) < tol
                and np.all(np.isfinite(self.translation)))


# ---------------------------------------------------------------------------
# so(3) / se(3) exponential and logarithm
# ---------------------------------------------------------------------------

_SMALL_ANGLE = 1e-10


def so3_exp(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for a rotation vector."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    w = _hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + w + 0.5 * (w @ w)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * w + b * (w @ w)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (principal branch, angle < pi)."""
    c = (np.trace(r) - 1.0) / 2.0
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    if theta < _SMALL_ANGLE:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        raise ValueError("rotation angle at or near pi: log branch is ambiguous")
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta / (2.0 * np.sin(theta)) * axis


def _so3_left_jacobian(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    w = _hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * w + (w @ w) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * w + b * (w @ w)


def _so3_left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    w = _hat(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * w + (w @ w) / 12.0
    half = theta / 2.0
    cot = half / np.tan(half)
    return np.eye(3) - 0.5 * w + (1.0 - cot) / theta**2 * (w @ w)


def se3_exp(twist: np.ndarray) -> Pose:
    """Exponential map.  ``twist = (rho, omega)``: translation part first."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    rho, omega = twist[:3], twist[3:]
    r = so3_exp(omega)
    t = _so3_left_jacobian(omega) @ rho
    return Pose(r, t)


def se3_log(pose: Pose) -> np.ndarray:
    """Logarithm map, inverse of :func:`se3_exp`.  Angle must be below pi."""
    omega = so3_log(pose.rotation)
    rho = _so3_left_jacobian_inv(omega) @ pose.translation
    return np.concatenate([rho, omega])


def _se3_q_matrix(rho: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Top-right block of the SE(3) left Jacobian (closed form)."""
    theta = np.linalg.norm(omega)
    rx = _hat(rho)
    wx = _hat(omega)
    wx2 = wx @ wx
    m2 = wx @ rx + rx @ wx + wx @ rx @ wx
    m3 = wx2 @ rx + rx @ wx2 - 3.0 * wx @ rx @ wx
    m4 = wx @ rx @ wx2 + wx2 @ rx @ wx
    if theta < 1e-4:
        c2 = 1.0 / 6.0 - theta**2 / 120.0
        c3 = 1.0 / 24.0 - theta**2 / 720.0
        c4 = 1.0 / 120.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c2 = (theta - s) / theta**3
        c3 = (theta**2 / 2.0 + c - 1.0) / theta**4
        c4 = 0.5 * (c3 + 3.0 * (theta - s - theta**3 / 6.0) / theta**5)
    return 0.5 * rx + c2 * m2 + c3 * m3 + c4 * m4


def se3_left_jacobian(twist: np.ndarray) -> np.ndarray:
    """Left Jacobian of SE(3) at ``twist`` (6x6, translation block first)."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    rho, omega = twist[:3], twist[3:]
    jl = _so3_left_jacobian(omega)
    q = _se3_q_matrix(rho, omega)
    out = np.zeros((6, 6))
    out[:3, :3] = jl
    out[3:, 3:] = jl
    out[:3, 3:] = q
    return out


def se3_left_jacobian_inv(twist: np.ndarray) -> np.ndarray:
    """Inverse of the SE(3) left Jacobian at ``twist``."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    rho, omega = twist[:3], twist[3:]
    jli = _so3_left_jacobian_inv(omega)
    q = _se3_q_matrix(rho, omega)
    out = np.zeros((6, 6))
    out[:3, :3] = jli
    out[3:, 3:] = jli
    out[:3, 3:] = -jli @ q @ jli
    return out


def se3_right_jacobian_inv(twist: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: Jr(x) = Jl(-x)."""
    return se3_left_jacobian_inv(-np.asarray(twist, dtype=np.float64))


def se3_adjoint(pose: Pose) -> np.ndarray:
    """Adjoint matrix mapping twists between frames (translation block first)."""
    out = np.zeros((6, 6))
    out[:3, :3] = pose.rotation
    out[3:, 3:] = pose.rotation
    out[:3, 3:] = _hat(pose.translation) @ pose.rotation
    return out


# ---------------------------------------------------------------------------
# Nearest neighbors
# ---------------------------------------------------------------------------

class KdTree:
    """Exact nearest-neighbor index over a point set (thin cKDTree wrapper)."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise ValueError("cannot build a KdTree over an empty cloud")
        self._points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self._points)

    def nearest(self, query: np.ndarray, k: int = 1):
        """Indices and distances of the true k nearest points, ascending."""
        if k < 1 or k > len(self._points):
            raise ValueError(f"k={k} out of range for tree of size {len(self._points)}")
        query = np.asarray(query, dtype=np.float64)
        dist, idx = self._tree.query(query, k=k)
        if k == 1:
            dist = np.atleast_1d(dist)
            idx = np.atleast_1d(idx)
        return idx, dist

    def query_batch(self, queries: np.ndarray, k: int = 1):
        """Vectorized nearest query; returns (indices, distances) arrays."""
        dist, idx = self._tree.query(np.asarray(queries, dtype=np.float64),
                                     k=k, workers=-1)
        return idx, dist

    def radius_counts(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Number of stored points within ``radius`` of each query."""
        return np.asarray(
            self._tree.query_ball_point(np.asarray(queries, dtype=np.float64),
                                        radius, return_length=True))


# ---------------------------------------------------------------------------
# Normal estimation
# ---------------------------------------------------------------------------

def estimate_normals(cloud: PointCloud, k: int = 10) -> PointCloud:
    """Per-point normals from the smallest eigenvector of the k-NN covariance.

    Normals are unit length and oriented toward the +z hemisphere (ties keep
    +z).  Degenerate neighborhoods (rank < 2, e.g. collinear points) get NaN
    rows.
    """
    if k < 3:
        raise ValueError("normal estimation needs k >= 3")
    if len(cloud) < k:
        raise ValueError(f"cloud of {len(cloud)} points is smaller than k={k}")
    tree = KdTree(cloud.points)
    idx, _ = tree.query_batch(cloud.points, k=k)
    neighborhoods = cloud.points[idx]                       # (N, k, 3)
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigvals, eigvecs = np.linalg.eigh(cov)                  # ascending
    normals = eigvecs[:, :, 0].copy()
    # rank < 2: the two largest eigenvalues must be clearly nonzero
    scale = np.maximum(eigvals[:, 2], 1e-300)
    degenerate = eigvals[:, 1] / scale < 1e-9
    flip = normals[:, 2] < 0.0
    normals[flip] = -normals[flip]
    normals[degenerate] = np.nan
    return PointCloud(cloud.points, normals, cloud.timestamp, cloud.frame_id)
