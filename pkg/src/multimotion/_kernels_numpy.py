"""Pure-numpy rigid-transform kernels (fallback backend).

Mirrors the compiled extension ``multimotion._kernels``; the active backend
is chosen in :mod:`multimotion.backend`.

Conventions used throughout the package:

* 6-vectors are ordered translation-first, ``xi = (rho, phi)``.
* Transforms are 4x4 float arrays with rotation ``C`` and translation ``r``.
* Perturbations act on the left, ``T <- exp(eps^) T``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AngleAtPi

# Below this rotation angle the closed forms switch to 4th-order series.
SMALL_ANGLE = 1e-6
# log is undefined at pi; the inverse Jacobians degrade earlier.
LOG_ANGLE_MARGIN = 1e-6
JACOBIAN_ANGLE_MARGIN = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _sin_coeffs(angle: float) -> tuple[float, float, float]:
    """Coefficients (sin a / a, (1 - cos a) / a^2, (a - sin a) / a^3)."""
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        return (
            1.0 - a2 / 6.0 + a2 * a2 / 120.0,
            0.5 - a2 / 24.0 + a2 * a2 / 720.0,
            1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0,
        )
    a2 = angle * angle
    s = math.sin(angle)
    # 1 - cos a written as 2 sin^2(a/2) to avoid cancellation.
    one_minus_cos = 2.0 * math.sin(0.5 * angle) ** 2
    return s / angle, one_minus_cos / a2, (angle - s) / (a2 * angle)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    angle = math.sqrt(float(phi @ phi))
    a, b, _ = _sin_coeffs(angle)
    k = skew(phi)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; angle must be below pi."""
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    angle = math.acos(min(1.0, max(-1.0, 0.5 * (trace - 1.0))))
    if angle >= math.pi - LOG_ANGLE_MARGIN:
        raise AngleAtPi(f"rotation angle {angle:.9f} within 1e-6 of pi")
    axis_part = np.array(
        [
            rot[2, 1] - rot[1, 2],
            rot[0, 2] - rot[2, 0],
            rot[1, 0] - rot[0, 1],
        ]
    )
    if angle < SMALL_ANGLE:
        return 0.5 * axis_part
    return (0.5 * angle / math.sin(angle)) * axis_part


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    angle = math.sqrt(float(phi @ phi))
    _, b, c = _sin_coeffs(angle)
    k = skew(phi)
    return np.eye(3) + b * k + c * (k @ k)


def so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    angle = math.sqrt(float(phi @ phi))
    if angle >= math.pi - JACOBIAN_ANGLE_MARGIN:
        raise AngleAtPi(f"rotation angle {angle:.9f} too close to pi for inverse")
    k = skew(phi)
    if angle < SMALL_ANGLE:
        a2 = angle * angle
        coeff = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        half = 0.5 * angle
        coeff = (1.0 - half * math.cos(half) / math.sin(half)) / (angle * angle)
    return np.eye(3) - 0.5 * k + coeff * (k @ k)


def hat(xi: np.ndarray) -> np.ndarray:
    """4x4 matrix form of an se(3) coordinate vector."""
    out = np.zeros((4, 4))
    out[:3, :3] = skew(xi[3:6])
    out[:3, 3] = xi[:3]
    return out


def exp(xi: np.ndarray) -> np.ndarray:
    """Exponential map from se(3) coordinates to a transform."""
    out = np.eye(4)
    out[:3, :3] = so3_exp(xi[3:6])
    out[:3, 3] = so3_left_jacobian(xi[3:6]) @ xi[:3]
    return out


def log(transform: np.ndarray) -> np.ndarray:
    """Inverse of exp; raises AngleAtPi within 1e-6 of the pi singularity."""
    phi = so3_log(transform[:3, :3])
    rho = so3_left_jacobian_inv(phi) @ transform[:3, 3]
    return np.concatenate([rho, phi])


def curly_hat(xi: np.ndarray) -> np.ndarray:
    """6x6 adjoint representation of an se(3) coordinate vector."""
    out = np.zeros((6, 6))
    k = skew(xi[3:6])
    out[:3, :3] = k
    out[3:, 3:] = k
    out[:3, 3:] = skew(xi[:3])
    return out


def adjoint(transform: np.ndarray) -> np.ndarray:
    """6x6 adjoint of a transform: maps twists between frames."""
    rot = transform[:3, :3]
    out = np.zeros((6, 6))
    out[:3, :3] = rot
    out[3:, 3:] = rot
    out[:3, 3:] = skew(transform[:3, 3]) @ rot
    return out


def odot(p: np.ndarray) -> np.ndarray:
    """4x6 matrix satisfying ``hat(xi) @ p == odot(p) @ xi``."""
    out = np.zeros((4, 6))
    out[:3, :3] = p[3] * np.eye(3)
    out[:3, 3:] = -skew(p[:3])
    return out


def _q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Upper-right block of the SE(3) left Jacobian."""
    angle = math.sqrt(float(phi @ phi))
    rx = skew(rho)
    px = skew(phi)
    a2 = angle * angle
    # Wider series switch than elsewhere: the quartic/quintic coefficient
    # numerators cancel catastrophically below ~1e-2 rad.
    if angle < 1e-2:
        c1 = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
        c2 = 1.0 / 24.0 - a2 / 720.0 + a2 * a2 / 40320.0
        c3 = 1.0 / 120.0 - a2 / 2520.0 + a2 * a2 / 120960.0
    else:
        a4 = a2 * a2
        s = math.sin(angle)
        one_minus_cos = 2.0 * math.sin(0.5 * angle) ** 2
        c1 = (angle - s) / (a2 * angle)
        c2 = (0.5 * a2 - one_minus_cos) / a4
        m5 = (angle - s - a2 * angle / 6.0) / (a4 * angle)
        c3 = 0.5 * (3.0 * m5 + c2)
    pxrx = px @ rx
    rxpx = rx @ px
    pxpx = px @ px
    return (
        0.5 * rx
        + c1 * (pxrx + rxpx + px @ rxpx)
        + c2 * (pxpx @ rx + rx @ pxpx - 3.0 * pxrx @ px)
        + c3 * (pxrx @ pxpx + pxpx @ rxpx)
    )


def left_jacobian(xi: np.ndarray) -> np.ndarray:
    """6x6 left Jacobian of SE(3)."""
    j = so3_left_jacobian(xi[3:6])
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[:3, 3:] = _q_matrix(xi[:3], xi[3:6])
    return out


def left_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse of the 6x6 left Jacobian; angle must stay below pi - 1e-3."""
    jinv = so3_left_jacobian_inv(xi[3:6])
    q = _q_matrix(xi[:3], xi[3:6])
    out = np.zeros((6, 6))
    out[:3, :3] = jinv
    out[3:, 3:] = jinv
    out[:3, 3:] = -jinv @ q @ jinv
    return out


def jinv_vec_jacobian(xi: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Exact derivative of ``xi -> left_jacobian_inv(xi) @ vec``.

    Returns the 6x6 matrix L with L @ d = directional derivative along d.
    Computed from the Frechet derivative of the Jacobian power series
    J(xi) = sum_n curly_hat(xi)^n / (n+1)!, evaluated via the block-triangular
    embedding f([[A, B], [0, A]]) = [[f(A), Df(A)[B]], [0, f(A)]].
    """
    a = curly_hat(xi)
    jinv = left_jacobian_inv(xi)
    v = jinv @ vec
    directions = np.stack([curly_hat(e) for e in np.eye(6)])  # (6, 6, 6)
    # For m = [[a, b], [0, a]] the top-right block of m^n follows
    # tr_n = a @ tr_{n-1} + b @ a^{n-1}; the a-power chain is shared.
    a_power = np.eye(6)
    top_right = np.zeros((6, 6, 6))
    dj = np.zeros((6, 6, 6))
    factorial = 1.0
    for n in range(1, 40):
        top_right = a @ top_right + directions @ a_power
        a_power = a @ a_power
        factorial *= n + 1.0
        contribution = top_right / factorial
        dj += contribution
        if np.max(np.abs(contribution)) < 1e-18:
            break
    rows = dj @ v  # (6, 6): row i is the Frechet derivative along basis i times v
    return -(jinv @ rows.T)
