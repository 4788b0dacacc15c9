"""Sliding-window batch Gauss-Newton estimation for one motion label.

The state of a problem is a knot (pose, velocity) per window frame plus the
label's landmarks; the cost combines stereo reprojection residuals and the
constant-velocity prior between consecutive knots. The arbitrary global frame
is pinned by holding the first knot's pose fixed.

Two measurement models are supported: ``egomotion`` (landmarks are static,
the camera moves) and ``thirdparty`` (landmarks ride on a moving body,
observed through the already-estimated camera trajectory and a body centroid
transform).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import camera as cam
from . import wnoa
from .backend import kernels
from .errors import (
    BehindCamera,
    Diverged,
    EmptyProblem,
    InsufficientTracklets,
    SingularSystem,
)

EGOMOTION = "egomotion"
THIRDPARTY = "thirdparty"

MAX_ITERATIONS = 50
STEP_TOLERANCE = 1e-8
COST_TOLERANCE = 1e-10
MAX_HALVINGS = 8
MAX_FAILED_STEPS = 5


@dataclass
class Window:
    """Frame indices and their timestamps covered by one solve."""

    frames: list[int]
    times: np.ndarray

    def __post_init__(self):
        self.frames = list(self.frames)
        self.times = np.asarray(self.times, dtype=float)
        if len(self.frames) != len(self.times):
            raise ValueError("frames and times must have equal length")
        if len(self.frames) >= 2 and np.any(np.diff(self.times) <= 0):
            raise ValueError("window times must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def position(self, frame: int) -> int:
        return self.frames.index(frame)


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    termination_reason: str


@dataclass
class EstimationProblem:
    """Operating point and data of one label's batch problem."""

    label: int
    mode: str
    times: np.ndarray
    knots: list[wnoa.Knot]
    landmark_ids: list[int]
    landmarks: np.ndarray  # (L, 4) homogeneous operating points
    observations: list[tuple[np.ndarray, np.ndarray]]  # per frame: (landmark idx, y)
    prior: wnoa.PriorConfig
    camera: cam.StereoModel
    ego_poses: np.ndarray | None = None  # (K, 4, 4), required for thirdparty
    centroid: np.ndarray | None = None  # T_l1_c1, required for thirdparty
    gauge_fixed: bool = field(default=True)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        k = len(self.times)
        if len(self.knots) != k or len(self.observations) != k:
            raise ValueError("knots and observations must cover every window frame")
        if k >= 2 and np.any(np.diff(self.times) <= 0):
            raise ValueError("knot times must be strictly increasing")
        self.landmarks = np.asarray(self.landmarks, dtype=float).reshape(-1, 4)
        n_lm = self.landmarks.shape[0]
        for idx, y in self.observations:
            if len(idx) and (np.min(idx) < 0 or np.max(idx) >= n_lm):
                raise ValueError("observation references an unknown landmark")
        if self.mode == THIRDPARTY:
            if self.ego_poses is None or self.centroid is None:
                raise ValueError("thirdparty mode requires ego_poses and centroid")
            self.ego_poses = np.asarray(self.ego_poses, dtype=float)
            self.centroid = np.asarray(self.centroid, dtype=float)
        elif self.mode != EGOMOTION:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def num_frames(self) -> int:
        return len(self.times)

    @property
    def num_landmarks(self) -> int:
        return self.landmarks.shape[0]

    @property
    def dim(self) -> int:
        return 12 * self.num_frames + 3 * self.num_landmarks

    def state_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        poses = np.stack([k.pose for k in self.knots])
        velocities = np.stack([k.velocity for k in self.knots])
        return poses, velocities, self.landmarks.copy()

    def set_state(self, poses: np.ndarray, velocities: np.ndarray, landmarks: np.ndarray) -> None:
        self.knots = [
            wnoa.Knot(float(t), poses[i].copy(), velocities[i].copy(), wnoa.ESTIMATED)
            for i, t in enumerate(self.times)
        ]
        self.landmarks = landmarks.copy()


def _odot_batch(points: np.ndarray) -> np.ndarray:
    n = points.shape[0]
    out = np.zeros((n, 4, 6))
    out[:, 0, 0] = points[:, 3]
    out[:, 1, 1] = points[:, 3]
    out[:, 2, 2] = points[:, 3]
    out[:, 0, 4] = points[:, 2]
    out[:, 0, 5] = -points[:, 1]
    out[:, 1, 3] = -points[:, 2]
    out[:, 1, 5] = points[:, 0]
    out[:, 2, 3] = points[:, 1]
    out[:, 2, 4] = -points[:, 0]
    return out


def _frame_blocks(problem, poses, landmarks, k):
    """Residuals and (pose, landmark) Jacobian stacks for one frame."""
    idx, y = problem.observations[k]
    pts = landmarks[idx]
    if problem.mode == EGOMOTION:
        chain = poses[k]
        anchored = pts
    else:
        chain = problem.ego_poses[k] @ np.linalg.inv(problem.centroid) @ np.linalg.inv(poses[k])
        anchored = pts @ problem.centroid.T
    z = anchored @ chain.T
    if np.any(z[:, 2] <= cam.MIN_DEPTH):
        raise BehindCamera(f"landmark behind camera at window position {k}")
    residual = y - cam.project_batch(problem.camera, z)
    ds = cam.projection_jacobian_batch(problem.camera, z)
    odots = _odot_batch(z if problem.mode == EGOMOTION else anchored)
    if problem.mode == EGOMOTION:
        pose_jac = ds @ odots
        lm_dirs = chain @ cam.POINT_SELECTOR
    else:
        pose_jac = ds @ (-np.einsum("ij,njk->nik", chain, odots))
        lm_dirs = chain @ problem.centroid @ cam.POINT_SELECTOR
    lm_jac = ds @ lm_dirs
    return residual, pose_jac, lm_jac


def _measurement_cost(problem, poses, landmarks) -> float:
    rinv = problem.camera.noise_cov_inv
    total = 0.0
    for k in range(problem.num_frames):
        idx, y = problem.observations[k]
        if len(idx) == 0:
            continue
        pts = landmarks[idx]
        if problem.mode == EGOMOTION:
            z = pts @ poses[k].T
        else:
            chain = problem.ego_poses[k] @ np.linalg.inv(problem.centroid) @ np.linalg.inv(poses[k])
            z = (pts @ problem.centroid.T) @ chain.T
        if np.any(z[:, 2] <= cam.MIN_DEPTH):
            raise BehindCamera(f"landmark behind camera at window position {k}")
        residual = y - cam.project_batch(problem.camera, z)
        total += 0.5 * float(np.einsum("ni,ij,nj->", residual, rinv, residual))
    return total


def _prior_cost(problem, poses, velocities) -> float:
    total = 0.0
    for k in range(problem.num_frames - 1):
        k0 = wnoa.Knot(problem.times[k], poses[k], velocities[k])
        k1 = wnoa.Knot(problem.times[k + 1], poses[k + 1], velocities[k + 1])
        err = wnoa.prior_error(k0, k1)
        qinv = wnoa.process_cov_inv(problem.times[k], problem.times[k + 1], problem.prior)
        total += 0.5 * float(err @ qinv @ err)
    return total


def _total_cost(problem, poses, velocities, landmarks) -> float:
    return _measurement_cost(problem, poses, landmarks) + _prior_cost(problem, poses, velocities)


def assemble_normal_equations(problem: EstimationProblem) -> tuple[np.ndarray, np.ndarray]:
    """Dense Gauss-Newton normal equations at the current operating point.

    Per-factor blocks are scattered through index maps; layout is
    [pose blocks | velocity blocks | landmark blocks].
    """
    if all(len(idx) == 0 for idx, _ in problem.observations):
        raise EmptyProblem("no observations in problem")
    poses, velocities, landmarks = problem.state_arrays()
    num_k = problem.num_frames
    num_l = problem.num_landmarks
    dim = problem.dim
    lm_base = 12 * num_k
    a_mat = np.zeros((dim, dim))
    b_vec = np.zeros(dim)
    rinv = problem.camera.noise_cov_inv
    lm_diag = np.zeros((num_l, 3, 3))
    for k in range(num_k):
        idx, _ = problem.observations[k]
        if len(idx) == 0:
            continue
        residual, pose_jac, lm_jac = _frame_blocks(problem, poses, landmarks, k)
        w_pose = np.einsum("ij,njk->nik", rinv, pose_jac)
        w_lm = np.einsum("ij,njk->nik", rinv, lm_jac)
        w_res = residual @ rinv
        rows = slice(6 * k, 6 * k + 6)
        a_mat[rows, rows] += np.einsum("nij,nik->jk", pose_jac, w_pose)
        b_vec[rows] += np.einsum("nij,ni->j", pose_jac, w_res)
        cross = np.einsum("nij,nik->njk", pose_jac, w_lm)  # (n, 6, 3)
        cols = (lm_base + 3 * idx[:, None] + np.arange(3)).ravel()
        a_mat[np.ix_(range(6 * k, 6 * k + 6), cols)] += cross.transpose(1, 0, 2).reshape(6, -1)
        a_mat[np.ix_(cols, range(6 * k, 6 * k + 6))] += cross.transpose(0, 2, 1).reshape(-1, 6)
        np.add.at(lm_diag, idx, np.einsum("nij,nik->njk", lm_jac, w_lm))
        np.add.at(b_vec, cols, np.einsum("nij,ni->nj", lm_jac, w_res).ravel())
    lm_rows = lm_base + 3 * np.arange(num_l)[:, None] + np.arange(3)
    a_mat[lm_rows[:, :, None], lm_rows[:, None, :]] += lm_diag
    for k in range(num_k - 1):
        k0 = wnoa.Knot(problem.times[k], poses[k], velocities[k])
        k1 = wnoa.Knot(problem.times[k + 1], poses[k + 1], velocities[k + 1])
        err = wnoa.prior_error(k0, k1)
        jac = wnoa.prior_jacobian(k0, k1)
        qinv = wnoa.process_cov_inv(problem.times[k], problem.times[k + 1], problem.prior)
        idx24 = np.concatenate(
            [
                np.arange(6 * k, 6 * k + 6),
                np.arange(6 * num_k + 6 * k, 6 * num_k + 6 * k + 6),
                np.arange(6 * (k + 1), 6 * (k + 1) + 6),
                np.arange(6 * num_k + 6 * (k + 1), 6 * num_k + 6 * (k + 1) + 6),
            ]
        )
        weighted = jac.T @ qinv
        a_mat[np.ix_(idx24, idx24)] += weighted @ jac
        b_vec[idx24] += weighted @ err
    return a_mat, b_vec


def _apply_step(poses, velocities, landmarks, delta, num_k):
    new_poses = np.empty_like(poses)
    for k in range(num_k):
        eps = delta[6 * k : 6 * k + 6]
        new_poses[k] = kernels.exp(np.ascontiguousarray(eps)) @ poses[k]
    new_velocities = velocities + delta[6 * num_k : 12 * num_k].reshape(-1, 6)
    new_landmarks = landmarks.copy()
    new_landmarks[:, :3] += delta[12 * num_k :].reshape(-1, 3)
    return new_poses, new_velocities, new_landmarks


def solve_and_update(problem: EstimationProblem, max_iterations: int = MAX_ITERATIONS) -> SolveReport:
    """Iterate Gauss-Newton with step halving until convergence.

    Mutates the problem's operating point in place. The first knot's pose is
    held fixed to pin the gauge freedom.
    """
    poses, velocities, landmarks = problem.state_arrays()
    num_k = problem.num_frames
    free = np.ones(problem.dim, dtype=bool)
    if problem.gauge_fixed:
        free[:6] = False
    cost = _total_cost(problem, poses, velocities, landmarks)
    initial_cost = cost
    failed_steps = 0
    iterations = 0
    reason = "max_iterations"
    converged = False
    while iterations < max_iterations:
        iterations += 1
        problem.set_state(poses, velocities, landmarks)
        a_mat, b_vec = assemble_normal_equations(problem)
        a_free = a_mat[np.ix_(free, free)]
        try:
            np.linalg.cholesky(a_free)
            delta_free = np.linalg.solve(a_free, b_vec[free])
        except np.linalg.LinAlgError as exc:
            raise SingularSystem("normal equations rank deficient after gauge fixing") from exc
        delta = np.zeros(problem.dim)
        delta[free] = delta_free
        if np.max(np.abs(delta)) < STEP_TOLERANCE:
            converged = True
            reason = "step_tol"
            break
        step = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = _apply_step(poses, velocities, landmarks, step * delta, num_k)
            try:
                trial_cost = _total_cost(problem, *trial)
            except BehindCamera:
                trial_cost = np.inf
            if trial_cost <= cost + 1e-12:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            failed_steps += 1
            if failed_steps >= MAX_FAILED_STEPS:
                raise Diverged(f"no cost decrease in {MAX_FAILED_STEPS} consecutive iterations")
            continue
        failed_steps = 0
        poses, velocities, landmarks = trial
        previous = cost
        cost = trial_cost
        if abs(previous - cost) <= COST_TOLERANCE * max(previous, 1e-12):
            converged = True
            reason = "cost_tol"
            break
    problem.set_state(poses, velocities, landmarks)
    return SolveReport(iterations, initial_cost, cost, converged, reason)


def _seed_knots(window: Window, initial_guess: list[wnoa.Knot] | None) -> list[wnoa.Knot]:
    """Window knots from a guess, extended by constant-velocity propagation."""
    knots: list[wnoa.Knot] = []
    if initial_guess:
        guess = sorted(initial_guess, key=lambda k: k.time)
        by_time = {round(k.time, 9): k for k in guess}
        last = None
        for t in window.times:
            key = round(float(t), 9)
            if key in by_time:
                found = by_time[key]
                last = wnoa.Knot(float(t), found.pose.copy(), found.velocity.copy())
            elif last is not None:
                last = wnoa.extrapolate(last, float(t)).with_provenance(wnoa.ESTIMATED)
            else:
                first = guess[0]
                last = wnoa.extrapolate(
                    wnoa.Knot(first.time, first.pose.copy(), first.velocity.copy()), float(t)
                ).with_provenance(wnoa.ESTIMATED)
            knots.append(last)
    else:
        knots = [wnoa.Knot(float(t), np.eye(4), np.zeros(6)) for t in window.times]
    return knots


def _usable_tracklets(tracklets, window: Window, min_frames: int = 2):
    usable = []
    frame_set = set(window.frames)
    for tracklet in tracklets:
        frames = [f for f in tracklet.frames() if f in frame_set]
        if len(frames) >= min_frames:
            usable.append((tracklet, frames))
    return usable


def _init_problem(mode, tracklets, window, prior, camera_model, knots, ego_poses, centroid, label):
    usable = _usable_tracklets(tracklets, window)
    if len(usable) < 3:
        raise InsufficientTracklets(
            f"need at least 3 tracklets spanning 2 frames, found {len(usable)}"
        )
    poses = np.stack([k.pose for k in knots])
    landmark_ids = []
    landmark_pts = []
    obs_idx: list[list[int]] = [[] for _ in window.frames]
    obs_y: list[list[np.ndarray]] = [[] for _ in window.frames]
    inv_centroid = np.linalg.inv(centroid) if centroid is not None else None
    for tracklet, frames in usable:
        first = frames[0]
        pos = window.position(first)
        point_cam = cam.triangulate(camera_model, tracklet.observations[first])
        if mode == EGOMOTION:
            chain = poses[pos]
        else:
            chain = ego_poses[pos] @ inv_centroid @ np.linalg.inv(poses[pos]) @ centroid
        anchor_point = np.linalg.inv(chain) @ point_cam
        lm_index = len(landmark_ids)
        landmark_ids.append(tracklet.tracklet_id)
        landmark_pts.append(anchor_point)
        for f in frames:
            pos_f = window.position(f)
            obs_idx[pos_f].append(lm_index)
            obs_y[pos_f].append(tracklet.observations[f])
    observations = [
        (
            np.asarray(idx, dtype=int),
            np.asarray(ys, dtype=float).reshape(len(ys), 4),
        )
        for idx, ys in zip(obs_idx, obs_y)
    ]
    return EstimationProblem(
        label=label,
        mode=mode,
        times=window.times,
        knots=knots,
        landmark_ids=landmark_ids,
        landmarks=np.asarray(landmark_pts),
        observations=observations,
        prior=prior,
        camera=camera_model,
        ego_poses=ego_poses,
        centroid=centroid,
    )


def estimate_egomotion(
    tracklets,
    window: Window,
    prior: wnoa.PriorConfig,
    camera_model: cam.StereoModel,
    initial_guess: list[wnoa.Knot] | None = None,
    label: int = 0,
    max_iterations: int = MAX_ITERATIONS,
) -> tuple[list[wnoa.Knot], dict[int, np.ndarray], SolveReport]:
    """Estimate the camera trajectory from static-scene tracklets."""
    knots = _seed_knots(window, initial_guess)
    problem = _init_problem(
        EGOMOTION, tracklets, window, prior, camera_model, knots, None, None, label
    )
    report = solve_and_update(problem, max_iterations=max_iterations)
    landmarks = {tid: problem.landmarks[i] for i, tid in enumerate(problem.landmark_ids)}
    return problem.knots, landmarks, report


def estimate_thirdparty(
    tracklets,
    ego_trajectory: list[wnoa.Knot],
    window: Window,
    prior: wnoa.PriorConfig,
    camera_model: cam.StereoModel,
    centroid: np.ndarray,
    initial_guess: list[wnoa.Knot] | None = None,
    label: int = 0,
    max_iterations: int = MAX_ITERATIONS,
) -> tuple[list[wnoa.Knot], dict[int, np.ndarray], SolveReport]:
    """Estimate one body's geocentric trajectory given the egomotion."""
    ego_by_time = {round(k.time, 9): k for k in ego_trajectory}
    try:
        ego_poses = np.stack([ego_by_time[round(float(t), 9)].pose for t in window.times])
    except KeyError as exc:
        raise ValueError("ego trajectory does not cover the window") from exc
    knots = _seed_knots(window, initial_guess)
    problem = _init_problem(
        THIRDPARTY,
        tracklets,
        window,
        prior,
        camera_model,
        knots,
        ego_poses,
        np.asarray(centroid, dtype=float),
        label,
    )
    report = solve_and_update(problem, max_iterations=max_iterations)
    landmarks = {tid: problem.landmarks[i] for i, tid in enumerate(problem.landmark_ids)}
    return problem.knots, landmarks, report


def centroid_init(tracklets, camera_model: cam.StereoModel, frame: int) -> np.ndarray:
    """Initial body-to-camera transform: identity rotation, point centroid.

    The translation column is the negated centroid of the label's points
    triangulated at its first observed frame.
    """
    points = []
    for tracklet in tracklets:
        y = tracklet.observations.get(frame)
        if y is not None:
            points.append(cam.triangulate(camera_model, y)[:3])
    if not points:
        raise InsufficientTracklets(f"no labeled tracklet observed at frame {frame}")
    mean = np.mean(points, axis=0)
    out = np.eye(4)
    out[:3, 3] = -mean
    return out
