import numpy as np
import pytest

from multimotion import camera, se3
from multimotion.errors import BehindCamera, DegenerateDisparity

from conftest import random_pose


@pytest.fixture
def model():
    return camera.StereoModel(fu=400.0, fv=400.0, cu=300.0, cv=300.0, baseline=0.1)


def random_point(rng, depth_range=(2.0, 8.0)):
    return np.array(
        [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(*depth_range), 1.0]
    )


class TestProject:
    def test_hand_computed_case(self, model):
        y = camera.project(model, [0.0, 0.0, 2.0, 1.0])
        assert np.allclose(y, [300.0, 300.0, 280.0, 300.0])

    def test_optical_axis_hits_principal_point(self, model, rng):
        for depth in (0.5, 2.0, 50.0):
            y = camera.project(model, [0.0, 0.0, depth, 1.0])
            assert np.allclose(y[:2], [model.cu, model.cv])

    def test_behind_camera(self, model):
        with pytest.raises(BehindCamera):
            camera.project(model, [0.0, 0.0, -1.0, 1.0])

    def test_batch_matches_scalar(self, model, rng):
        pts = np.stack([random_point(rng) for _ in range(20)])
        batch = camera.project_batch(model, pts)
        for i in range(20):
            assert np.allclose(batch[i], camera.project(model, pts[i]))


class TestTriangulate:
    def test_inverse_of_project(self, model, rng):
        for _ in range(100):
            p = random_point(rng)
            assert np.max(np.abs(camera.triangulate(model, camera.project(model, p)) - p)) < 1e-10

    def test_degenerate_disparity(self, model):
        with pytest.raises(DegenerateDisparity):
            camera.triangulate(model, [300.0, 300.0, 299.5, 300.0])

    def test_noisy_reprojection_residual_bounded(self, model, rng):
        # The reprojection of a triangulated noisy observation stays within
        # the size of the injected perturbation.
        for _ in range(200):
            p = random_point(rng)
            y = camera.project(model, p)
            noise = rng.normal(0.0, 1.0, size=4)
            noisy = y + noise
            back = camera.project(model, camera.triangulate(model, noisy))
            assert np.linalg.norm(back - noisy) <= np.linalg.norm(noise) + 1e-9


class TestTransformModels:
    def test_ego_identity(self, rng):
        p = random_point(rng)
        assert np.allclose(camera.ego_transform_model(np.eye(4), p), p)

    def test_ego_translation(self, rng):
        t = np.eye(4)
        t[:3, 3] = [1.0, -2.0, 0.5]
        p = random_point(rng)
        out = camera.ego_transform_model(t, p)
        assert np.allclose(out[:3], p[:3] + t[:3, 3])

    def test_ego_random_matches_dense_product(self, rng):
        t = random_pose(rng)
        p = random_point(rng)
        assert np.allclose(camera.ego_transform_model(t, p), t @ p)

    def test_thirdparty_static_everything(self, rng):
        p = random_point(rng)
        out = camera.thirdparty_transform_model(np.eye(4), random_pose(rng), np.eye(4), np.eye(4), p)
        assert np.allclose(out, p)

    def test_thirdparty_conjugated_translation(self, rng):
        centroid = random_pose(rng)
        motion = np.eye(4)
        motion[:3, 3] = [0.2, 0.0, -0.1]
        p = random_point(rng)
        out = camera.thirdparty_transform_model(np.eye(4), centroid, motion, np.eye(4), p)
        oracle = np.linalg.inv(centroid) @ np.linalg.inv(motion) @ centroid @ p
        assert np.max(np.abs(out - oracle)) < 1e-12

    def test_thirdparty_reduces_to_ego(self, rng):
        # Identity centroid and body motion equal to the inverse camera motion
        # reproduce the ego model chain.
        t_ck = random_pose(rng)
        p = random_point(rng)
        out = camera.thirdparty_transform_model(t_ck, np.eye(4), se3.inverse(t_ck), np.eye(4), p)
        oracle = t_ck @ t_ck @ p
        assert np.max(np.abs(out - oracle)) < 1e-10


class TestMeasurementError:
    def test_perfect_observation(self, model, rng):
        p = random_point(rng)
        assert np.allclose(camera.measurement_error(model, camera.project(model, p), p), 0.0)

    def test_single_pixel_offset(self, model, rng):
        p = random_point(rng)
        y = camera.project(model, p)
        y[0] += 1.0
        assert np.allclose(camera.measurement_error(model, y, p), [1.0, 0.0, 0.0, 0.0])

    def test_random_case(self, model, rng):
        p = random_point(rng)
        y = rng.uniform(0.0, 600.0, size=4)
        assert np.allclose(camera.measurement_error(model, y, p), y - camera.project(model, p))


def fd_ego_jacobian(model, t_ck, p, step=1e-6):
    """Central finite differences of the ego measurement error, negated."""
    out = np.empty((4, 9))
    for i in range(9):
        delta = np.zeros(9)
        delta[i] = step

        def error(sign):
            d = sign * delta
            t = se3.exp(d[:6]) @ t_ck
            q = p.copy()
            q[:3] += d[6:]
            y = np.zeros(4)
            return y - camera.project(model, t @ q)

        out[:, i] = -(error(1.0) - error(-1.0)) / (2 * step)
    return out


def fd_thirdparty_jacobian(model, t_ck, centroid, motion, p, step=1e-6):
    out = np.empty((4, 9))
    for i in range(9):
        delta = np.zeros(9)
        delta[i] = step

        def error(sign):
            d = sign * delta
            t = se3.exp(d[:6]) @ motion
            q = p.copy()
            q[:3] += d[6:]
            z = camera.thirdparty_transform_model(t_ck, centroid, t, np.eye(4), q)
            return np.zeros(4) - camera.project(model, z)

        out[:, i] = -(error(1.0) - error(-1.0)) / (2 * step)
    return out


class TestEgoJacobian:
    def test_finite_difference_agreement(self, model, rng):
        for _ in range(100):
            t_ck = random_pose(rng, max_angle=0.5, trans_scale=0.5)
            p = random_point(rng, depth_range=(3.0, 8.0))
            jac = camera.ego_measurement_jacobian(model, t_ck, p)
            fd = fd_ego_jacobian(model, t_ck, p)
            scale = max(1.0, np.max(np.abs(fd)))
            assert np.max(np.abs(jac - fd)) / scale < 1e-5

    def test_landmark_columns_are_selected_projection(self, model, rng):
        t_ck = random_pose(rng, max_angle=0.5, trans_scale=0.5)
        p = random_point(rng, depth_range=(3.0, 8.0))
        jac = camera.ego_measurement_jacobian(model, t_ck, p)
        ds = camera.projection_jacobian(model, t_ck @ p)
        assert np.allclose(jac[:, 6:], (ds @ t_ck)[:, :3])

    def test_on_axis_insensitive_to_y_translation(self, model):
        # Landmark on the optical axis: u_left derivative w.r.t. y-translation
        # of the pose is zero.
        p = np.array([0.0, 0.0, 4.0, 1.0])
        jac = camera.ego_measurement_jacobian(model, np.eye(4), p)
        assert abs(jac[0, 1]) < 1e-12


class TestThirdPartyJacobian:
    def test_finite_difference_agreement(self, model, rng):
        for _ in range(100):
            t_ck = random_pose(rng, max_angle=0.4, trans_scale=0.5)
            centroid = random_pose(rng, max_angle=0.4, trans_scale=1.0)
            motion = random_pose(rng, max_angle=0.4, trans_scale=0.5)
            p = random_point(rng, depth_range=(4.0, 9.0))
            z = camera.thirdparty_transform_model(t_ck, centroid, motion, np.eye(4), p)
            if z[2] < 0.5:
                continue
            jac = camera.thirdparty_measurement_jacobian(model, t_ck, centroid, motion, np.eye(4), p)
            fd = fd_thirdparty_jacobian(model, t_ck, centroid, motion, p)
            scale = max(1.0, np.max(np.abs(fd)))
            assert np.max(np.abs(jac - fd)) / scale < 1e-5

    def test_pose_block_sign_is_negated_ego_pattern(self, model, rng):
        # With identity centroid and camera the chain reduces to the inverse
        # body motion, and the pose block carries the leading minus sign.
        p = random_point(rng, depth_range=(4.0, 8.0))
        jac = camera.thirdparty_measurement_jacobian(
            model, np.eye(4), np.eye(4), np.eye(4), np.eye(4), p
        )
        ds = camera.projection_jacobian(model, p)
        from multimotion.backend import kernels

        assert np.allclose(jac[:, :6], -(ds @ kernels.odot(np.ascontiguousarray(p))))

    def test_rigid_identity_deformation_matches_dense_oracle(self, model, rng):
        t_ck = random_pose(rng, max_angle=0.3, trans_scale=0.3)
        centroid = random_pose(rng, max_angle=0.3, trans_scale=0.5)
        motion = random_pose(rng, max_angle=0.3, trans_scale=0.3)
        p = random_point(rng, depth_range=(4.0, 8.0))
        prefix = t_ck @ np.linalg.inv(centroid) @ np.linalg.inv(motion)
        anchored = centroid @ p
        z = prefix @ anchored
        ds = camera.projection_jacobian(model, z)
        from multimotion.backend import kernels

        oracle_pose = ds @ (-prefix @ kernels.odot(np.ascontiguousarray(anchored)))
        oracle_lm = ds @ (prefix @ centroid @ camera.POINT_SELECTOR)
        jac = camera.thirdparty_measurement_jacobian(model, t_ck, centroid, motion, np.eye(4), p)
        assert np.allclose(jac[:, :6], oracle_pose)
        assert np.allclose(jac[:, 6:], oracle_lm)
