"""SE(3) / se(3) operations used by every other module.

Poses are plain 4x4 float64 arrays with rotation block ``C``, translation
``r`` and homogeneous bottom row. Algebra coordinates and twists are
6-vectors ordered translation-first, ``(rho, phi)``. All perturbations in the
package are left-multiplicative, ``T <- exp(eps^) T``.

The heavy kernels live in a compiled extension with a pure-numpy fallback;
see :mod:`multimotion.backend`.
"""

from __future__ import annotations

import numpy as np

from .backend import BACKEND, kernels

__all__ = [
    "BACKEND",
    "hat",
    "exp",
    "log",
    "left_jacobian",
    "left_jacobian_inv",
    "adjoint",
    "curly_hat",
    "odot",
    "so3_exp",
    "so3_log",
    "inverse",
    "is_valid_pose",
    "check_pose",
    "rotation_angle",
    "align_point_sets",
    "jinv_vec_jacobian",
]


def _vec(x, n: int) -> np.ndarray:
    out = np.ascontiguousarray(x, dtype=float)
    if out.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got shape {out.shape}")
    return out


def _mat(x, shape: tuple[int, int]) -> np.ndarray:
    out = np.ascontiguousarray(x, dtype=float)
    if out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    return out


def hat(xi) -> np.ndarray:
    """4x4 matrix form of se(3) coordinates (skew of phi, rho column)."""
    return kernels.hat(_vec(xi, 6))


def exp(xi) -> np.ndarray:
    """Exponential map: se(3) coordinates to a pose."""
    return kernels.exp(_vec(xi, 6))


def log(transform) -> np.ndarray:
    """Inverse of exp. Raises AngleAtPi within 1e-6 of the pi singularity."""
    return kernels.log(_mat(transform, (4, 4)))


def left_jacobian(xi) -> np.ndarray:
    """6x6 left Jacobian of SE(3)."""
    return kernels.left_jacobian(_vec(xi, 6))


def left_jacobian_inv(xi) -> np.ndarray:
    """Inverse left Jacobian; requires rotation angle below pi - 1e-3."""
    return kernels.left_jacobian_inv(_vec(xi, 6))


def adjoint(transform) -> np.ndarray:
    """6x6 adjoint of a pose; maps twist coordinates between frames."""
    return kernels.adjoint(_mat(transform, (4, 4)))


def curly_hat(xi) -> np.ndarray:
    """6x6 adjoint representation of se(3) coordinates."""
    return kernels.curly_hat(_vec(xi, 6))


def odot(p) -> np.ndarray:
    """4x6 matrix with ``hat(xi) @ p == odot(p) @ xi`` for all xi."""
    return kernels.odot(_vec(p, 4))


def so3_exp(phi) -> np.ndarray:
    return kernels.so3_exp(_vec(phi, 3))


def so3_log(rot) -> np.ndarray:
    return kernels.so3_log(_mat(rot, (3, 3)))


def jinv_vec_jacobian(xi, vec) -> np.ndarray:
    """Exact derivative of ``xi -> left_jacobian_inv(xi) @ vec``."""
    return kernels.jinv_vec_jacobian(_vec(xi, 6), _vec(vec, 6))


def inverse(transform) -> np.ndarray:
    """Closed-form pose inverse (uses the rotation transpose)."""
    t = np.asarray(transform, dtype=float)
    out = np.eye(4)
    rt = t[:3, :3].T
    out[:3, :3] = rt
    out[:3, 3] = -rt @ t[:3, 3]
    return out


def rotation_angle(transform) -> float:
    """Rotation angle of a pose in [0, pi]."""
    t = np.asarray(transform, dtype=float)
    trace = t[0, 0] + t[1, 1] + t[2, 2]
    return float(np.arccos(np.clip(0.5 * (trace - 1.0), -1.0, 1.0)))


def is_valid_pose(transform, tol: float = 1e-9) -> bool:
    t = np.asarray(transform, dtype=float)
    if t.shape != (4, 4):
        return False
    rot = t[:3, :3]
    if np.max(np.abs(rot.T @ rot - np.eye(3))) > tol:
        return False
    if abs(np.linalg.det(rot) - 1.0) > tol:
        return False
    return bool(np.all(t[3] == np.array([0.0, 0.0, 0.0, 1.0])))


def check_pose(transform, tol: float = 1e-9) -> np.ndarray:
    t = np.asarray(transform, dtype=float)
    if not is_valid_pose(t, tol):
        raise ValueError("matrix is not a valid pose")
    return t


def align_point_sets(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Rigid transform T with ``T @ src ~= dst`` in the least-squares sense.

    Standard SVD (Kabsch) solution on mean-centred (n, 3) point arrays.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    cross = (dst - dst_mean).T @ (src - src_mean)
    u, _, vt = np.linalg.svd(cross)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt
    out = np.eye(4)
    out[:3, :3] = rot
    out[:3, 3] = dst_mean - rot @ src_mean
    return out
