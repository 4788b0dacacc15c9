"""Locally-constant-velocity motion prior on SE(3).

A trajectory sample ("knot") is a pose plus a body-centric 6-vector velocity
``w`` with kinematics ``dT/dt = hat(w) @ T``. Between knots the prior assumes
white noise on acceleration, which makes the 12-dim local state (pose
coordinates relative to an anchor knot, transformed velocity) evolve as a
linear constant-velocity system. That local model supplies the transition
matrix, process covariance, prior error and Jacobian used by the estimator,
plus extrapolation and interpolation of trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .backend import kernels
from .errors import DegenerateInterval, GapTooShort  # noqa: F401  (GapTooShort re-exported)

ESTIMATED = "estimated"
EXTRAPOLATED = "extrapolated"
INTERPOLATED = "interpolated"

MIN_INTERVAL = 1e-9


@dataclass(frozen=True)
class Knot:
    """One trajectory sample: timestamped pose and body-centric velocity."""

    time: float
    pose: np.ndarray
    velocity: np.ndarray
    provenance: str = ESTIMATED

    def with_provenance(self, provenance: str) -> "Knot":
        return replace(self, provenance=provenance)


def _default_qc() -> np.ndarray:
    return np.diag([0.01] * 6)


@dataclass(frozen=True)
class PriorConfig:
    """Power-spectral-density matrix of the white acceleration noise."""

    qc: np.ndarray = field(default_factory=_default_qc)

    def __post_init__(self):
        qc = np.asarray(self.qc, dtype=float)
        if qc.shape != (6, 6):
            raise ValueError("qc must be 6x6")
        if np.max(np.abs(qc - qc.T)) > 1e-12:
            raise ValueError("qc must be symmetric")
        if np.min(np.linalg.eigvalsh(qc)) <= 0.0:
            raise ValueError("qc must be positive definite")
        object.__setattr__(self, "qc", qc)
        object.__setattr__(self, "qc_inv", np.linalg.inv(qc))

    @classmethod
    def isotropic(cls, translational: float = 0.01, rotational: float = 0.01) -> "PriorConfig":
        return cls(np.diag([translational] * 3 + [rotational] * 3))

    @classmethod
    def from_diagonal(cls, diagonal) -> "PriorConfig":
        diagonal = np.asarray(diagonal, dtype=float)
        if diagonal.shape != (6,):
            raise ValueError("qc diagonal must have 6 entries")
        return cls(np.diag(diagonal))


@dataclass(frozen=True)
class LocalState:
    """12-vector trajectory state relative to an anchor knot.

    At the anchor time the pose part is zero and the velocity part equals the
    anchor velocity.
    """

    gamma: np.ndarray
    anchor_time: float
    anchor_pose: np.ndarray


def transition(t_k: float, tau: float) -> np.ndarray:
    """Constant-velocity state transition from t_k to tau (12x12)."""
    out = np.eye(12)
    out[:6, 6:] = (tau - t_k) * np.eye(6)
    return out


def process_cov(t_k: float, t: float, cfg: PriorConfig) -> np.ndarray:
    """Accumulated process covariance of the prior over (t_k, t)."""
    dt = t - t_k
    if dt < MIN_INTERVAL:
        raise DegenerateInterval(f"interval {dt} below {MIN_INTERVAL} s")
    qc = cfg.qc
    out = np.empty((12, 12))
    out[:6, :6] = (dt**3 / 3.0) * qc
    out[:6, 6:] = (dt**2 / 2.0) * qc
    out[6:, :6] = (dt**2 / 2.0) * qc
    out[6:, 6:] = dt * qc
    return out


def process_cov_inv(t_k: float, t: float, cfg: PriorConfig) -> np.ndarray:
    """Closed-form inverse of process_cov."""
    dt = t - t_k
    if dt < MIN_INTERVAL:
        raise DegenerateInterval(f"interval {dt} below {MIN_INTERVAL} s")
    qi = cfg.qc_inv
    out = np.empty((12, 12))
    out[:6, :6] = (12.0 / dt**3) * qi
    out[:6, 6:] = (-6.0 / dt**2) * qi
    out[6:, :6] = (-6.0 / dt**2) * qi
    out[6:, 6:] = (4.0 / dt) * qi
    return out


def local_state(query_pose: np.ndarray, query_vel: np.ndarray, anchor: Knot) -> LocalState:
    """Express a (pose, velocity) pair in the anchor knot's local frame."""
    xi = kernels.log(np.ascontiguousarray(query_pose @ np.linalg.inv(anchor.pose)))
    vel = kernels.left_jacobian_inv(xi) @ np.asarray(query_vel, dtype=float)
    return LocalState(np.concatenate([xi, vel]), anchor.time, anchor.pose)


def global_state(state: LocalState) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of local_state: recover the global pose and velocity."""
    xi = state.gamma[:6]
    pose = kernels.exp(xi) @ state.anchor_pose
    vel = kernels.left_jacobian(xi) @ state.gamma[6:]
    return pose, vel


def prior_error(knot_k: Knot, knot_k1: Knot) -> np.ndarray:
    """Deviation of a knot pair from the constant-velocity prior (12-vector).

    Zero exactly when knot_k1 is the constant-velocity advance of knot_k.
    """
    dt = knot_k1.time - knot_k.time
    if dt < MIN_INTERVAL:
        raise DegenerateInterval(f"knot interval {dt} below {MIN_INTERVAL} s")
    xi = kernels.log(np.ascontiguousarray(knot_k1.pose @ np.linalg.inv(knot_k.pose)))
    jinv = kernels.left_jacobian_inv(xi)
    err = np.empty(12)
    err[:6] = xi - dt * knot_k.velocity
    err[6:] = jinv @ knot_k1.velocity - knot_k.velocity
    return err


def prior_jacobian(knot_k: Knot, knot_k1: Knot) -> np.ndarray:
    """12x24 Jacobian of the prior error, columns over (eps_k, psi_k, eps_k1, psi_k1).

    Sign convention matches the solver's linearization
    ``error(op + dx) ~= error(op) - E @ dx``.

    The pose rows are the exact log/adjoint blocks. The velocity rows use the
    exact directional derivative of ``left_jacobian_inv(xi) @ w``; its leading
    order is the familiar ``0.5 * curly_hat(w)`` block.
    """
    dt = knot_k1.time - knot_k.time
    if dt < MIN_INTERVAL:
        raise DegenerateInterval(f"knot interval {dt} below {MIN_INTERVAL} s")
    rel = np.ascontiguousarray(knot_k1.pose @ np.linalg.inv(knot_k.pose))
    xi = kernels.log(rel)
    jinv = kernels.left_jacobian_inv(xi)
    tbar = kernels.adjoint(rel)
    jinv_tbar = jinv @ tbar
    vel_deriv = kernels.jinv_vec_jacobian(xi, np.asarray(knot_k1.velocity, dtype=float))
    out = np.zeros((12, 24))
    out[:6, :6] = jinv_tbar
    out[:6, 6:12] = dt * np.eye(6)
    out[:6, 12:18] = -jinv
    out[6:, :6] = vel_deriv @ jinv_tbar
    out[6:, 6:12] = np.eye(6)
    out[6:, 12:18] = -vel_deriv @ jinv
    out[6:, 18:] = -jinv
    return out


def extrapolate(anchor: Knot, tau: float) -> Knot:
    """Constant-velocity advance of a knot to time tau (either direction)."""
    dt = tau - anchor.time
    pose = kernels.exp(np.ascontiguousarray(dt * anchor.velocity)) @ anchor.pose
    return Knot(tau, pose, np.array(anchor.velocity, dtype=float, copy=True), EXTRAPOLATED)


def interpolate(knot_j: Knot, knot_k: Knot, tau: float, cfg: PriorConfig) -> Knot:
    """Posterior-mean interpolation between two knots at tau in (t_j, t_k)."""
    span = knot_k.time - knot_j.time
    if span < MIN_INTERVAL:
        raise DegenerateInterval(f"knot span {span} below {MIN_INTERVAL} s")
    if not (knot_j.time <= tau <= knot_k.time):
        raise ValueError("interpolation time outside the knot interval")
    if tau - knot_j.time < MIN_INTERVAL:
        return knot_j.with_provenance(INTERPOLATED)
    if knot_k.time - tau < MIN_INTERVAL:
        return knot_k.with_provenance(INTERPOLATED)
    gamma_j = np.concatenate([np.zeros(6), knot_j.velocity])
    gamma_k = local_state(knot_k.pose, knot_k.velocity, knot_j).gamma
    # Weights on the two boundary states; the qc factors cancel in w_right.
    w_right = process_cov(knot_j.time, tau, cfg) @ transition(tau, knot_k.time).T
    w_right = w_right @ process_cov_inv(knot_j.time, knot_k.time, cfg)
    w_left = transition(knot_j.time, tau) - w_right @ transition(knot_j.time, knot_k.time)
    gamma = w_left @ gamma_j + w_right @ gamma_k
    pose, vel = global_state(LocalState(gamma, knot_j.time, knot_j.pose))
    return Knot(tau, pose, vel, INTERPOLATED)
