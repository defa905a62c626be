"""Scan-matching backends: closed-form step, ICP variants, GICP."""

import numpy as np
import pytest

from lidar_graph_slam.geometry import (PointCloud, Pose, estimate_normals,
                                       se3_exp, so3_exp)
from lidar_graph_slam.registration import (GICP, ICP_P2P, ICP_P2PLANE,
                                           RegistrationConfig,
                                           compute_gicp_covariances,
                                           gicp_cost_and_gradient, align,
                                           rigid_align_pairs)

from conftest import box_surface_cloud, pose_error, random_pose

ALL_METHODS = [ICP_P2P, ICP_P2PLANE, GICP]


def tight_config(method):
    return RegistrationConfig(method=method, max_iterations=100,
                              transformation_epsilon=1e-6,
                              max_correspondence_distance=2.0)


def make_pair(rng, method, max_trans=1.0, max_angle=np.deg2rad(10.0)):
    """Target cloud, source = target seen under a random motion, truth."""
    target = box_surface_cloud(rng, n=500)
    if method == ICP_P2PLANE:
        target = estimate_normals(target, k=10)
    truth = random_pose(rng, max_trans, max_angle)
    source = target.transformed(truth.inverse())
    return source, target, truth


class TestRigidAlignPairs:
    def test_recovers_known_transform(self, rng):
        truth = random_pose(rng, 3.0, 1.0)
        src = rng.normal(size=(50, 3))
        dst = truth.apply(src)
        est = rigid_align_pairs(src, dst)
        terr, rerr = pose_error(est, truth)
        assert terr < 1e-9 and rerr < 1e-5

    def test_no_reflection(self, rng):
        # mirrored data must still yield a proper rotation (det = +1)
        src = rng.normal(size=(30, 3))
        dst = src * np.array([1.0, 1.0, -1.0])
        est = rigid_align_pairs(src, dst)
        assert np.linalg.det(est.rotation) == pytest.approx(1.0)

    def test_collinear_pairs_raise(self):
        src = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
        with pytest.raises(ValueError):
            rigid_align_pairs(src, src + 1.0)

    def test_too_few_pairs_raise(self):
        with pytest.raises(ValueError):
            rigid_align_pairs(np.zeros((2, 3)), np.zeros((2, 3)))


class TestAlign:
    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_recovers_motion(self, rng, method):
        for _ in range(5):
            source, target, truth = make_pair(rng, method)
            res = align(source, target, cfg=tight_config(method))
            terr, rerr = pose_error(res.transform, truth)
            assert res.converged
            assert terr < 1e-3
            assert rerr < 0.05
            assert res.fitness < 1e-4

    @pytest.mark.parametrize("method", ALL_METHODS)
    def test_identity_on_identical_clouds(self, rng, method):
        source, target, _ = make_pair(rng, method, max_trans=0.0,
                                      max_angle=1e-12)
        res = align(source, target, cfg=tight_config(method))
        terr, rerr = pose_error(res.transform, Pose.identity())
        assert terr < 1e-6 and rerr < 1e-4

    def test_p2p_cost_non_increasing_with_iterations(self, rng):
        source, target, _ = make_pair(rng, ICP_P2P, max_trans=0.8)
        fits = []
        for iters in (1, 2, 4, 8, 16, 32):
            cfg = RegistrationConfig(method=ICP_P2P, max_iterations=iters,
                                     transformation_epsilon=1e-9,
                                     max_correspondence_distance=2.0)
            fits.append(align(source, target, cfg=cfg).fitness)
        assert all(b <= a + 1e-9 for a, b in zip(fits, fits[1:]))

    def test_initial_guess_is_used(self, rng):
        # motion too large for identity start, recoverable from a good guess
        source, target, truth = make_pair(rng, ICP_P2P, max_trans=0.0)
        big = Pose(so3_exp([0.0, 0.0, np.pi / 3]), np.array([4.0, 0.0, 0.0]))
        source = target.transformed(big.inverse())
        res = align(source, target, guess=big, cfg=tight_config(ICP_P2P))
        terr, rerr = pose_error(res.transform, big)
        assert terr < 1e-3 and rerr < 0.05

    def test_too_few_correspondences_fails_gracefully(self, rng):
        source = PointCloud(rng.normal(size=(30, 3)))
        target = PointCloud(rng.normal(size=(30, 3)) + 100.0)
        res = align(source, target, cfg=tight_config(ICP_P2P))
        assert not res.converged
        assert np.isinf(res.fitness)

    def test_empty_cloud_fails_gracefully(self, rng):
        empty = PointCloud(np.empty((0, 3)))
        full = PointCloud(rng.normal(size=(30, 3)))
        res = align(empty, full)
        assert not res.converged and np.isinf(res.fitness)

    def test_unknown_method_raises(self, rng):
        source, target, _ = make_pair(rng, ICP_P2P)
        with pytest.raises(ValueError):
            align(source, target, cfg=RegistrationConfig(method="WHAT"))

    def test_p2plane_requires_target_normals(self, rng):
        source, target, _ = make_pair(rng, ICP_P2P)
        with pytest.raises(ValueError):
            align(source, target, cfg=RegistrationConfig(method=ICP_P2PLANE))

    def test_overlap_and_capped_fitness(self, rng):
        # half the source has no counterpart: overlap ~0.5 and the fitness
        # is pulled up by the cap on unmatched points
        target = box_surface_cloud(rng, n=400)
        far = PointCloud(np.vstack([target.points,
                                    rng.normal(size=(400, 3)) + 50.0]))
        cfg = RegistrationConfig(method=ICP_P2P, max_iterations=1,
                                 transformation_epsilon=1e-9,
                                 max_correspondence_distance=2.0)
        res = align(far, target, cfg=cfg)
        assert res.overlap == pytest.approx(0.5, abs=0.05)
        assert res.fitness >= 0.4 * cfg.max_correspondence_distance ** 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RegistrationConfig(max_iterations=0)
        with pytest.raises(ValueError):
            RegistrationConfig(transformation_epsilon=0.0)
        with pytest.raises(ValueError):
            RegistrationConfig(max_correspondence_distance=-1.0)


class TestGicpInternals:
    def test_covariances_are_disc_shaped(self, rng):
        # flat plane: smallest eigenvalue epsilon along z, ones in plane
        xy = rng.uniform(-5, 5, size=(400, 2))
        cloud = PointCloud(np.column_stack([xy, np.zeros(400)]))
        cov = compute_gicp_covariances(cloud, k=15)
        vals, vecs = np.linalg.eigh(cov)
        np.testing.assert_allclose(vals[:, 0], 1e-3, atol=1e-9)
        np.testing.assert_allclose(vals[:, 1:], 1.0, atol=1e-9)
        np.testing.assert_allclose(np.abs(vecs[:, 2, 0]), 1.0, atol=1e-9)

    def test_covariances_cached_per_cloud(self, rng):
        cloud = box_surface_cloud(rng, n=200)
        a = compute_gicp_covariances(cloud, k=15)
        b = compute_gicp_covariances(cloud, k=15)
        assert a is b

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            cloud_a = box_surface_cloud(rng, n=120)
            cloud_b = PointCloud(cloud_a.points
                                 + rng.normal(scale=0.05, size=(120, 3)))
            cov_a = compute_gicp_covariances(cloud_a, k=10)
            cov_b = compute_gicp_covariances(cloud_b, k=10)
            transform = random_pose(rng, 0.3, 0.1)
            _, grad = gicp_cost_and_gradient(cloud_a.points, cloud_b.points,
                                             cov_a, cov_b, transform)
            h = 1e-6
            fd = np.zeros(6)
            for j in range(6):
                delta = np.zeros(6)
                delta[j] = h
                cp, _ = gicp_cost_and_gradient(
                    cloud_a.points, cloud_b.points, cov_a, cov_b,
                    se3_exp(delta) @ transform)
                cm, _ = gicp_cost_and_gradient(
                    cloud_a.points, cloud_b.points, cov_a, cov_b,
                    se3_exp(-delta) @ transform)
                fd[j] = (cp - cm) / (2.0 * h)
            assert np.max(np.abs(grad - fd)) < 1e-5 * max(1.0, np.max(np.abs(fd)))
