"""Rectified stereo camera model and measurement Jacobians.

An observation is the 4-vector ``(u_left, v_left, u_right, v_right)`` in
pixels. Points are homogeneous 4-vectors. Two transform models feed the
projection: the egocentric one (landmarks move rigidly with the world as the
camera moves) and the geocentric third-party one (landmarks ride on an
independently moving body).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import BehindCamera, DegenerateDisparity

MIN_DEPTH = 1e-6
MIN_DISPARITY = 0.5

# Landmark perturbations touch only the spatial coordinates.
POINT_SELECTOR = np.vstack([np.eye(3), np.zeros((1, 3))])


@dataclass(frozen=True)
class StereoModel:
    fu: float
    fv: float
    cu: float
    cv: float
    baseline: float
    image_width: int = 640
    image_height: int = 480
    noise_cov: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.fu <= 0 or self.fv <= 0 or self.baseline <= 0:
            raise ValueError("focal lengths and baseline must be positive")
        cov = np.asarray(self.noise_cov, dtype=float)
        if cov.shape != (4, 4) or np.max(np.abs(cov - cov.T)) > 1e-12:
            raise ValueError("noise_cov must be symmetric 4x4")
        if np.min(np.linalg.eigvalsh(cov)) <= 0.0:
            raise ValueError("noise_cov must be positive definite")
        object.__setattr__(self, "noise_cov", cov)
        object.__setattr__(self, "noise_cov_inv", np.linalg.inv(cov))


@dataclass(frozen=True)
class Observation:
    tracklet_id: int
    frame_index: int
    y: np.ndarray  # (u_l, v_l, u_r, v_r) px


@dataclass(frozen=True)
class Landmark:
    """Homogeneous point in the camera frame of its first observation."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (4,) or p[3] != 1.0:
            raise ValueError("landmark must be homogeneous with unit fourth component")
        object.__setattr__(self, "p", p)


@dataclass
class Tracklet:
    """One feature's stereo observations, keyed by frame index."""

    tracklet_id: int
    observations: dict[int, np.ndarray] = field(default_factory=dict)

    def frames(self) -> list[int]:
        return sorted(self.observations)

    def add(self, frame: int, y) -> None:
        self.observations[frame] = np.asarray(y, dtype=float)


def project(model: StereoModel, point) -> np.ndarray:
    """Stereo pinhole projection of a homogeneous camera-frame point."""
    p = np.asarray(point, dtype=float)
    z = p[2]
    if z <= MIN_DEPTH:
        raise BehindCamera(f"depth {z} at or below {MIN_DEPTH} m")
    return np.array(
        [
            model.fu * p[0] / z + model.cu,
            model.fv * p[1] / z + model.cv,
            model.fu * (p[0] - model.baseline) / z + model.cu,
            model.fv * p[1] / z + model.cv,
        ]
    )


def project_batch(model: StereoModel, points: np.ndarray) -> np.ndarray:
    """Vectorized projection of (n, 4) points; caller guards depth."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    out = np.empty((points.shape[0], 4))
    out[:, 0] = model.fu * x / z + model.cu
    out[:, 1] = model.fv * y / z + model.cv
    out[:, 2] = model.fu * (x - model.baseline) / z + model.cu
    out[:, 3] = out[:, 1]
    return out


def triangulate(model: StereoModel, y) -> np.ndarray:
    """Invert the projection; averages the two row measurements."""
    y = np.asarray(y, dtype=float)
    disparity = y[0] - y[2]
    if disparity <= MIN_DISPARITY:
        raise DegenerateDisparity(f"disparity {disparity} px at or below {MIN_DISPARITY}")
    z = model.fu * model.baseline / disparity
    x = (y[0] - model.cu) * z / model.fu
    v = 0.5 * (y[1] + y[3])
    return np.array([x, (v - model.cv) * z / model.fv, z, 1.0])


def ego_transform_model(t_ck_c1: np.ndarray, landmark) -> np.ndarray:
    """Landmark mapped into the camera frame at time k."""
    return np.asarray(t_ck_c1, dtype=float) @ _point(landmark)


def thirdparty_transform_model(
    t_ck_c1: np.ndarray,
    t_l1_c1: np.ndarray,
    t_lk_l1: np.ndarray,
    deformation: np.ndarray,
    landmark,
) -> np.ndarray:
    """Egocentrically observed landmark pushed through a geocentric body motion.

    ``deformation`` is identity for rigid bodies.
    """
    chain = (
        np.asarray(t_ck_c1, dtype=float)
        @ np.linalg.inv(t_l1_c1)
        @ np.linalg.inv(t_lk_l1)
        @ np.asarray(deformation, dtype=float)
        @ np.asarray(t_l1_c1, dtype=float)
    )
    return chain @ _point(landmark)


def measurement_error(model: StereoModel, y, z_point) -> np.ndarray:
    """Residual between an observation and the projected model point."""
    y = y.y if isinstance(y, Observation) else np.asarray(y, dtype=float)
    return y - project(model, z_point)


def projection_jacobian(model: StereoModel, point) -> np.ndarray:
    """4x4 derivative of the stereo projection w.r.t. the homogeneous point."""
    p = np.asarray(point, dtype=float)
    z = p[2]
    if z <= MIN_DEPTH:
        raise BehindCamera(f"depth {z} at or below {MIN_DEPTH} m")
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    out = np.zeros((4, 4))
    out[0, 0] = model.fu * inv_z
    out[0, 2] = -model.fu * p[0] * inv_z2
    out[1, 1] = model.fv * inv_z
    out[1, 2] = -model.fv * p[1] * inv_z2
    out[2, 0] = model.fu * inv_z
    out[2, 2] = -model.fu * (p[0] - model.baseline) * inv_z2
    out[3, 1] = model.fv * inv_z
    out[3, 2] = -model.fv * p[1] * inv_z2
    return out


def projection_jacobian_batch(model: StereoModel, points: np.ndarray) -> np.ndarray:
    """(n, 4, 4) stack of projection derivatives; caller guards depth."""
    n = points.shape[0]
    inv_z = 1.0 / points[:, 2]
    inv_z2 = inv_z * inv_z
    out = np.zeros((n, 4, 4))
    out[:, 0, 0] = model.fu * inv_z
    out[:, 0, 2] = -model.fu * points[:, 0] * inv_z2
    out[:, 1, 1] = model.fv * inv_z
    out[:, 1, 2] = -model.fv * points[:, 1] * inv_z2
    out[:, 2, 0] = model.fu * inv_z
    out[:, 2, 2] = -model.fu * (points[:, 0] - model.baseline) * inv_z2
    out[:, 3, 1] = out[:, 1, 1]
    out[:, 3, 2] = out[:, 1, 2]
    return out


def ego_measurement_jacobian(model: StereoModel, t_ck_c1: np.ndarray, landmark) -> np.ndarray:
    """4x9 blocks (pose perturbation, landmark perturbation) for the ego model.

    Velocity states take zero columns and are omitted. Follows the solver's
    convention ``error(op + dx) ~= error(op) - G dx``.
    """
    t = np.asarray(t_ck_c1, dtype=float)
    z = t @ _point(landmark)
    ds = projection_jacobian(model, z)
    out = np.empty((4, 9))
    out[:, :6] = ds @ kernels.odot(np.ascontiguousarray(z))
    out[:, 6:] = ds @ (t @ POINT_SELECTOR)
    return out


def thirdparty_measurement_jacobian(
    model: StereoModel,
    t_ck_c1: np.ndarray,
    t_l1_c1: np.ndarray,
    t_lk_l1: np.ndarray,
    deformation: np.ndarray,
    landmark,
) -> np.ndarray:
    """4x9 blocks for the third-party model; pose block carries a minus sign
    because the body transform enters the chain inverted."""
    prefix = (
        np.asarray(t_ck_c1, dtype=float)
        @ np.linalg.inv(t_l1_c1)
        @ np.linalg.inv(t_lk_l1)
    )
    anchored = np.asarray(deformation, dtype=float) @ np.asarray(t_l1_c1, dtype=float) @ _point(landmark)
    z = prefix @ anchored
    ds = projection_jacobian(model, z)
    out = np.empty((4, 9))
    out[:, :6] = ds @ (-prefix @ kernels.odot(np.ascontiguousarray(anchored)))
    out[:, 6:] = ds @ (prefix @ np.asarray(deformation, dtype=float) @ np.asarray(t_l1_c1, dtype=float) @ POINT_SELECTOR)
    return out


def _point(landmark) -> np.ndarray:
    if isinstance(landmark, Landmark):
        return landmark.p
    return np.asarray(landmark, dtype=float)
