"""Scan matching backends behind one interface.

All methods estimate the rigid transform mapping the source cloud onto the
target cloud, starting from an initial guess.  Implemented: point-to-point
ICP (closed-form SVD step), point-to-plane ICP (linearized least squares),
and GICP (plane-to-plane, Gauss-Newton on the se(3) twist with analytic
gradients and a backtracking fallback).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .geometry import (KdTree, PointCloud, Pose, _hat, se3_exp)

ICP_P2P = "ICP_P2P"
ICP_P2PLANE = "ICP_P2PLANE"
GICP = "GICP"

MIN_CORRESPONDENCES = 10
GICP_EPSILON = 1e-3


@dataclass
class RegistrationConfig:
    method: str = GICP
    max_iterations: int = 64
    transformation_epsilon: float = 0.1
    max_correspondence_distance: float = 2.0
    covariance_knn: int = 15

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.transformation_epsilon <= 0:
            raise ValueError("transformation_epsilon must be positive")
        if self.max_correspondence_distance <= 0:
            raise ValueError("max_correspondence_distance must be positive")


@dataclass
class RegistrationResult:
    transform: Pose
    fitness: float              # mean squared correspondence distance, m^2
    iterations_used: int
    converged: bool
    overlap: float = 1.0        # fraction of source points with a match


# ---------------------------------------------------------------------------
# Closed-form rigid alignment of matched pairs (ICP point-to-point step)
# ---------------------------------------------------------------------------

def rigid_align_pairs(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rigid transform mapping src points onto dst points.

    SVD of the cross-covariance with reflection correction (det forced to
    +1).  Raises on rank-deficient input (e.g. collinear pairs).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3:
        raise ValueError("need at least 3 correspondence pairs")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, s, vt = np.linalg.svd(h)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise ValueError("rank-deficient cross-covariance (degenerate pairs)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    diag = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    r = vt.T @ diag @ u.T
    t = mu_d - r @ mu_s
    return Pose(r, t)


# ---------------------------------------------------------------------------
# GICP covariances, cost, and gradient
# ---------------------------------------------------------------------------

def _cloud_cache(cloud: PointCloud) -> dict:
    # clouds are immutable after publication, so derived structures
    # (KD-tree, covariances) can be cached on the instance
    cache = getattr(cloud, "_derived_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(cloud, "_derived_cache", cache)
    return cache


def cloud_kdtree(cloud: PointCloud) -> KdTree:
    cache = _cloud_cache(cloud)
    if "kdtree" not in cache:
        cache["kdtree"] = KdTree(cloud.points)
    return cache["kdtree"]


def compute_gicp_covariances(cloud: PointCloud, k: int = 15,
                             epsilon: float = GICP_EPSILON) -> np.ndarray:
    """Per-point covariances regularized to eigenvalues (1, 1, epsilon).

    The smallest axis of each k-NN covariance is treated as the local
    surface normal direction, mimicking plane-to-plane GICP.
    """
    k = min(k, len(cloud))
    if k < 3:
        raise ValueError("covariance estimation needs k >= 3 points")
    cache = _cloud_cache(cloud)
    key = ("gicp_cov", k, epsilon)
    if key in cache:
        return cache[key]
    tree = cloud_kdtree(cloud)
    idx, _ = tree.query_batch(cloud.points, k=k)
    nb = cloud.points[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)                # ascending eigenvalues
    vals = np.array([epsilon, 1.0, 1.0])
    out = np.einsum("nij,j,nkj->nik", vecs, vals, vecs)
    cache[key] = out
    return out


def gicp_cost_and_gradient(src: np.ndarray, dst: np.ndarray,
                           cov_src: np.ndarray, cov_dst: np.ndarray,
                           transform: Pose) -> Tuple[float, np.ndarray]:
    """GICP objective and its gradient for matched pairs.

    cost = sum_i d_i^T (C_dst_i + R C_src_i R^T)^-1 d_i with
    d_i = R s_i + t - q_i.  The gradient is taken w.r.t. a left-multiplied
    twist (rho, omega): cost(exp(delta) o T) differentiated at delta = 0,
    including the rotation dependence of the combined covariance.
    Pairs with a singular combined covariance are skipped.
    """
    r, t = transform.rotation, transform.translation
    p = src @ r.T + t                              # transformed source
    d = p - dst
    b = np.einsum("ij,njk,lk->nil", r, cov_src, r)  # R C_s R^T
    a = cov_dst + b
    dets = np.linalg.det(a)
    good = dets > 1e-300
    a, b, d, p = a[good], b[good], d[good], p[good]
    u = np.linalg.solve(a, d[..., None])[..., 0]   # M d
    cost = float(np.einsum("ni,ni->", d, u))
    grad = np.zeros(6)
    grad[:3] = 2.0 * u.sum(axis=0)
    bu = np.einsum("nij,nj->ni", b, u)
    grad[3:] = 2.0 * (np.cross(p, u) - np.cross(bu, u)).sum(axis=0)
    return cost, grad


def _gicp_normal_equations(src, dst, cov_src, cov_dst, transform):
    """Gauss-Newton H, b (and cost) for the GICP objective."""
    r, t = transform.rotation, transform.translation
    p = src @ r.T + t
    d = p - dst
    a = cov_dst + np.einsum("ij,njk,lk->nil", r, cov_src, r)
    u = np.linalg.solve(a, d[..., None])[..., 0]
    cost = float(np.einsum("ni,ni->", d, u))
    n = len(src)
    jac = np.zeros((n, 3, 6))
    jac[:, :, :3] = np.eye(3)
    jac[:, 0, 4] = p[:, 2]
    jac[:, 0, 5] = -p[:, 1]
    jac[:, 1, 3] = -p[:, 2]
    jac[:, 1, 5] = p[:, 0]
    jac[:, 2, 3] = p[:, 1]
    jac[:, 2, 4] = -p[:, 0]
    m_jac = np.linalg.solve(a, jac)               # M J
    h = np.einsum("nij,nik->jk", jac, m_jac)
    g = np.einsum("nij,ni->j", jac, u)
    return h, g, cost


# ---------------------------------------------------------------------------
# Main alignment loop
# ---------------------------------------------------------------------------

def _update_norm(delta: np.ndarray) -> float:
    return float(np.linalg.norm(delta[:3]) + np.linalg.norm(delta[3:]))


def align(source: PointCloud, target: PointCloud, guess: Optional[Pose] = None,
          cfg: Optional[RegistrationConfig] = None) -> RegistrationResult:
    """Register source onto target starting from guess.

    Returns the relative transform (source frame -> target frame), the mean
    squared correspondence distance at the final estimate, and convergence
    status.  Fewer than 10 usable correspondences at any iteration yields a
    non-converged result with infinite fitness.
    """
    cfg = cfg or RegistrationConfig()
    guess = guess or Pose.identity()
    if len(source) == 0 or len(target) == 0:
        return RegistrationResult(guess, np.inf, 0, False)

    tree = cloud_kdtree(target)
    transform = guess
    max_d = cfg.max_correspondence_distance

    cov_src = cov_dst = None
    tgt_normals = None
    if cfg.method == GICP:
        cov_src = compute_gicp_covariances(source, cfg.covariance_knn)
        cov_dst = compute_gicp_covariances(target, cfg.covariance_knn)
    elif cfg.method == ICP_P2PLANE:
        if target.normals is None:
            raise ValueError("point-to-plane ICP requires target normals")
        tgt_normals = target.normals
    elif cfg.method != ICP_P2P:
        raise ValueError(f"unknown registration method {cfg.method!r}")

    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        moved = source.points @ transform.rotation.T + transform.translation
        idx, dist = tree.query_batch(moved)
        mask = dist <= max_d
        if cfg.method == ICP_P2PLANE:
            mask &= np.isfinite(tgt_normals[idx]).all(axis=1)
        if int(mask.sum()) < MIN_CORRESPONDENCES:
            return RegistrationResult(transform, np.inf, iterations, False)
        src_sel = source.points[mask]
        moved_sel = moved[mask]
        dst_sel = target.points[idx[mask]]

        if cfg.method == ICP_P2P:
            try:
                delta_pose = rigid_align_pairs(moved_sel, dst_sel)
            except ValueError:
                return RegistrationResult(transform, np.inf, iterations, False)
            delta = np.concatenate([
                delta_pose.translation,
                _rotation_vector(delta_pose.rotation)])
        elif cfg.method == ICP_P2PLANE:
            n_sel = tgt_normals[idx[mask]]
            delta = _p2plane_step(moved_sel, dst_sel, n_sel)
            if delta is None:
                return RegistrationResult(transform, np.inf, iterations, False)
            delta_pose = se3_exp(delta)
        else:  # GICP
            cs = cov_src[mask]
            cd = cov_dst[idx[mask]]
            h, g, cost0 = _gicp_normal_equations(src_sel, dst_sel, cs, cd,
                                                 transform)
            try:
                step = -np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                step = -g / max(np.linalg.norm(g), 1e-12)
            cand = se3_exp(step) @ transform
            _, _, cost1 = _gicp_normal_equations(src_sel, dst_sel, cs, cd, cand)
            if cost1 > cost0:
                # GN step increased the cost: gradient descent + backtracking
                _, grad = gicp_cost_and_gradient(src_sel, dst_sel, cs, cd,
                                                 transform)
                alpha = 1.0 / max(np.linalg.norm(grad), 1e-12)
                step = -alpha * grad
                for _ in range(20):
                    cand = se3_exp(step) @ transform
                    _, _, c = _gicp_normal_equations(src_sel, dst_sel, cs, cd,
                                                     cand)
                    if c < cost0:
                        break
                    step *= 0.5
            delta = step
            delta_pose = se3_exp(step)

        transform = (delta_pose @ transform).orthonormalized()
        if _update_norm(delta) < cfg.transformation_epsilon:
            converged = True
            break

    moved = source.points @ transform.rotation.T + transform.translation
    idx, dist = tree.query_batch(moved)
    mask = dist <= max_d
    if int(mask.sum()) < MIN_CORRESPONDENCES:
        return RegistrationResult(transform, np.inf, iterations, False, 0.0)
    # unmatched points contribute the cap, so poor-overlap alignments
    # cannot masquerade as good fits
    fitness = float(np.mean(np.minimum(dist, max_d) ** 2))
    overlap = float(np.mean(mask))
    return RegistrationResult(transform, fitness, iterations, converged, overlap)


def _rotation_vector(r: np.ndarray) -> np.ndarray:
    from .geometry import so3_log
    return so3_log(r)


def _p2plane_step(moved: np.ndarray, dst: np.ndarray,
                  normals: np.ndarray) -> Optional[np.ndarray]:
    """Linearized point-to-plane least squares; returns a 6-twist or None."""
    res = np.einsum("ni,ni->n", normals, moved - dst)
    a = np.empty((len(moved), 6))
    a[:, :3] = normals
    a[:, 3:] = np.cross(moved, normals)
    h = a.T @ a
    g = a.T @ res
    try:
        return -np.linalg.solve(h, g)
    except np.linalg.LinAlgError:
        return None
