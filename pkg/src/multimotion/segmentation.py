"""Motion segmentation: assign tracklets to rigid-motion labels.

A deliberately lightweight stand-in for a full multilabeling optimizer:
hypotheses are camera-relative rigid trajectories fitted by small batch
solves, proposals come from minimal tracklet samples aligned frame-to-frame,
and assignment is nearest-hypothesis by mean reprojection residual with a
threshold and a minimum-support rule.

Tracklets are only scored against the measurement-supported span of a
hypothesis. Explaining observations beyond that span by extrapolation is the
job of motion closure in the pipeline, not of segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import camera as cam
from . import estimator, se3, wnoa
from .errors import DegenerateDisparity, InsufficientTracklets, MultiMotionError, NoMotionFound


@dataclass
class SegmentationParams:
    residual_threshold_px: float = 3.0
    min_support: int = 8
    proposals_per_round: int = 200
    max_rounds: int = 10
    sample_size: int = 3
    # Recruitment gate for scoring raw proposals; assignment stays strict.
    proposal_gate_factor: float = 2.0
    # Stop sampling after this many proposals without an improved inlier set.
    proposal_patience: int = 25


@dataclass
class Hypothesis:
    """A rigid motion candidate: camera-relative trajectory over its span."""

    label: int
    knots: list[wnoa.Knot]
    frames: list[int]
    members: set[int] = field(default_factory=set)

    def pose_at(self, frame: int) -> np.ndarray:
        return self.knots[self.frames.index(frame)].pose

    @property
    def supported_frames(self) -> set[int]:
        return set(self.frames)

    def mean_velocity(self) -> np.ndarray:
        return np.mean([k.velocity for k in self.knots], axis=0)


@dataclass
class Labeling:
    assignments: dict[int, int | None]
    support: dict[int, int]
    hypotheses: dict[int, Hypothesis]
    next_label: int

    def label_tracklets(self, label: int) -> set[int]:
        return {tid for tid, lab in self.assignments.items() if lab == label}


def _window_view(tracklets, window: estimator.Window, min_frames: int = 2):
    """Tracklets restricted to the window, keyed by id."""
    frame_set = set(window.frames)
    view = {}
    for tracklet in tracklets:
        frames = [f for f in tracklet.frames() if f in frame_set]
        if len(frames) >= min_frames:
            view[tracklet.tracklet_id] = (tracklet, frames)
    return view


def _subwindow(window: estimator.Window, frames: list[int]) -> estimator.Window:
    positions = [window.position(f) for f in frames]
    return estimator.Window(frames, window.times[positions])


def horn_trajectory(tracklets, frames, camera_model) -> list[wnoa.Knot] | None:
    """Frame-to-frame rigid alignment of triangulated points, chained.

    Cheap initial trajectory for hypothesis fits; returns None when fewer
    than three shared points connect some consecutive frame pair.
    """
    points: dict[int, dict[int, np.ndarray]] = {}
    for tracklet in tracklets:
        for f in frames:
            y = tracklet.observations.get(f)
            if y is None:
                continue
            try:
                points.setdefault(f, {})[tracklet.tracklet_id] = cam.triangulate(camera_model, y)[:3]
            except DegenerateDisparity:
                continue
    poses = [np.eye(4)]
    for prev, cur in zip(frames[:-1], frames[1:]):
        shared = sorted(set(points.get(prev, {})) & set(points.get(cur, {})))
        if len(shared) < 3:
            return None
        src = np.stack([points[prev][tid] for tid in shared])
        dst = np.stack([points[cur][tid] for tid in shared])
        step = se3.align_point_sets(src, dst)
        poses.append(step @ poses[-1])
    return poses


def _knots_from_poses(poses, times) -> list[wnoa.Knot]:
    knots = []
    velocities = []
    for i in range(len(poses) - 1):
        dt = times[i + 1] - times[i]
        velocities.append(se3.log(poses[i + 1] @ se3.inverse(poses[i])) / dt)
    if velocities:
        velocities.append(velocities[-1])
    else:
        velocities = [np.zeros(6)]
    for pose, vel, t in zip(poses, velocities, times):
        knots.append(wnoa.Knot(float(t), pose, vel))
    return knots


def _fit_hypothesis(label, member_ids, view, window, camera_model, prior, seed_knots=None):
    """Batch-fit a camera-relative trajectory to member tracklets."""
    tracklets = [view[tid][0] for tid in member_ids if tid in view]
    frames = sorted({f for tid in member_ids if tid in view for f in view[tid][1]})
    if len(frames) < 2 or len(tracklets) < 3:
        return None
    sub = _subwindow(window, frames)
    guess = seed_knots
    if guess is None:
        poses = horn_trajectory(tracklets, frames, camera_model)
        if poses is not None:
            guess = _knots_from_poses(poses, sub.times)
    try:
        knots, _, report = estimator.estimate_egomotion(
            tracklets, sub, prior, camera_model, initial_guess=guess, label=label
        )
    except MultiMotionError:
        return None
    if not np.isfinite(report.final_cost):
        return None
    return Hypothesis(label, knots, frames, set(member_ids))


def _tracklet_residual(tracklet, frames, hypothesis, camera_model) -> float:
    """Mean per-coordinate reprojection RMS (px) over the common span."""
    common = [f for f in frames if f in hypothesis.supported_frames]
    if len(common) < 2:
        return np.inf
    anchor = common[0]
    try:
        point = cam.triangulate(camera_model, tracklet.observations[anchor])
    except DegenerateDisparity:
        return np.inf
    anchor_pose_inv = se3.inverse(hypothesis.pose_at(anchor))
    point = anchor_pose_inv @ point
    poses = np.stack([hypothesis.pose_at(f) for f in common])
    z = np.einsum("nij,j->ni", poses, point)
    if np.any(z[:, 2] <= cam.MIN_DEPTH):
        return np.inf
    predicted = cam.project_batch(camera_model, z)
    observed = np.stack([tracklet.observations[f] for f in common])
    return float(np.mean(np.linalg.norm(observed - predicted, axis=1) / 2.0))


def _assign(view, hypotheses, camera_model, threshold):
    assignments = {}
    for tid, (tracklet, frames) in view.items():
        best_label = None
        best_residual = threshold
        for hyp in hypotheses.values():
            residual = _tracklet_residual(tracklet, frames, hyp, camera_model)
            if residual < best_residual:
                best_residual = residual
                best_label = hyp.label
        assignments[tid] = best_label
    return assignments


def propose_and_assign(
    tracklets,
    window: estimator.Window,
    camera_model,
    prior: wnoa.PriorConfig,
    previous: Labeling | None = None,
    params: SegmentationParams | None = None,
    rng: np.random.Generator | None = None,
    next_label: int = 0,
) -> Labeling:
    """Iterate propose / assign / refit until the labeling stabilizes."""
    params = params or SegmentationParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    view = _window_view(tracklets, window)
    if not view:
        raise InsufficientTracklets("no tracklet spans two frames inside the window")

    hypotheses: dict[int, Hypothesis] = {}
    if previous is not None:
        next_label = max(next_label, previous.next_label)
        for label, prev_hyp in previous.hypotheses.items():
            members = [tid for tid in prev_hyp.members if tid in view]
            refit = _fit_hypothesis(
                label, members, view, window, camera_model, prior, seed_knots=prev_hyp.knots
            )
            if refit is not None:
                hypotheses[label] = refit

    assignments = {tid: None for tid in view}
    for _ in range(params.max_rounds):
        new_assignments = _assign(view, hypotheses, camera_model, params.residual_threshold_px)
        # Enforce minimum support and refit survivors on their members.
        counts: dict[int, int] = {}
        for label in new_assignments.values():
            if label is not None:
                counts[label] = counts.get(label, 0) + 1
        for label in list(hypotheses):
            if counts.get(label, 0) < params.min_support:
                del hypotheses[label]
                new_assignments = {
                    tid: (None if lab == label else lab) for tid, lab in new_assignments.items()
                }
            else:
                refit = _fit_hypothesis(
                    label,
                    [tid for tid, lab in new_assignments.items() if lab == label],
                    view,
                    window,
                    camera_model,
                    prior,
                    seed_knots=hypotheses[label].knots,
                )
                if refit is not None:
                    hypotheses[label] = refit
        unassigned = [tid for tid, lab in new_assignments.items() if lab is None]
        added = False
        if len(unassigned) >= params.min_support:
            proposal = _best_proposal(unassigned, view, window, camera_model, prior, params, rng)
            if proposal is not None:
                proposal.label = next_label
                hypotheses[next_label] = proposal
                next_label += 1
                added = True
        if new_assignments == assignments and not added:
            assignments = new_assignments
            break
        assignments = new_assignments
    if not hypotheses:
        raise NoMotionFound("no motion hypothesis reached minimum support")
    # Authoritative final pass against the refitted hypotheses, so members are
    # guaranteed to sit below threshold.
    assignments = _assign(view, hypotheses, camera_model, params.residual_threshold_px)
    counts: dict[int, int] = {}
    for label in assignments.values():
        if label is not None:
            counts[label] = counts.get(label, 0) + 1
    for label in list(hypotheses):
        if counts.get(label, 0) < params.min_support:
            del hypotheses[label]
            assignments = {
                tid: (None if lab == label else lab) for tid, lab in assignments.items()
            }
    if not hypotheses:
        raise NoMotionFound("no motion hypothesis reached minimum support")
    for hyp in hypotheses.values():
        hyp.members = {tid for tid, lab in assignments.items() if lab == hyp.label}
    support = {label: len(hyp.members) for label, hyp in hypotheses.items()}
    return Labeling(assignments, support, hypotheses, next_label)


def _best_proposal(unassigned, view, window, camera_model, prior, params, rng):
    """RANSAC over minimal samples of unassigned tracklets.

    Each sample is batch-fit (frame-to-frame alignment as the initial guess)
    and scored by how many unassigned tracklets it recruits at a relaxed
    gate; the winner is refit on its recruits. Returns None when nothing
    reaches minimum support.
    """
    best_inliers: list[int] = []
    pool = sorted(unassigned)
    if len(pool) < params.sample_size:
        return None
    gate = params.proposal_gate_factor * params.residual_threshold_px
    stale = 0
    for _ in range(params.proposals_per_round):
        if stale >= params.proposal_patience and len(best_inliers) >= params.min_support:
            break
        sample = [pool[i] for i in rng.choice(len(pool), size=params.sample_size, replace=False)]
        candidate = _fit_hypothesis(-1, sample, view, window, camera_model, prior)
        if candidate is None:
            stale += 1
            continue
        inliers = [
            tid
            for tid in pool
            if _tracklet_residual(view[tid][0], view[tid][1], candidate, camera_model) < gate
        ]
        if len(inliers) > len(best_inliers):
            best_inliers = inliers
            stale = 0
        else:
            stale += 1
        if len(best_inliers) == len(pool):
            break
    if len(best_inliers) < params.min_support:
        return None
    return _fit_hypothesis(-1, best_inliers, view, window, camera_model, prior)


def select_egomotion_label(
    labeling: Labeling,
    previous_ego_support: set[int] | None = None,
    velocity_gate: float | None = None,
    previous_ego_velocity: np.ndarray | None = None,
) -> int:
    """Pick the label representing the camera.

    First window: the largest label (ties: smallest id). Afterwards: the
    label with maximum tracklet overlap against the previous egomotion
    support (ties: larger support, then smallest id). An optional velocity
    gate rejects a switch to a label whose motion is too different from the
    previous egomotion estimate.
    """
    if not labeling.support:
        raise NoMotionFound("empty labeling")
    if previous_ego_support:
        ranked = sorted(
            labeling.support,
            key=lambda lab: (
                -len(labeling.label_tracklets(lab) & previous_ego_support),
                -labeling.support[lab],
                lab,
            ),
        )
    else:
        ranked = sorted(labeling.support, key=lambda lab: (-labeling.support[lab], lab))
    chosen = ranked[0]
    if (
        velocity_gate is not None
        and previous_ego_velocity is not None
        and chosen in labeling.hypotheses
    ):
        if np.linalg.norm(labeling.hypotheses[chosen].mean_velocity() - previous_ego_velocity) > velocity_gate:
            for label in ranked[1:]:
                hyp = labeling.hypotheses.get(label)
                if hyp is None:
                    continue
                if np.linalg.norm(hyp.mean_velocity() - previous_ego_velocity) <= velocity_gate:
                    return label
    return chosen


def oracle_labeling(
    tracklets,
    window: estimator.Window,
    membership: dict[int, int | None],
    flip_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Labeling:
    """Ground-truth labeling (label id = body id), optionally corrupted."""
    rng = rng if rng is not None else np.random.default_rng(0)
    view = _window_view(tracklets, window)
    assignments: dict[int, int | None] = {}
    for tid in view:
        assignments[tid] = membership.get(tid)
    labels = sorted({lab for lab in assignments.values() if lab is not None})
    if flip_rate > 0.0 and len(labels) > 1:
        for tid in sorted(assignments):
            if assignments[tid] is None:
                continue
            if rng.uniform() < flip_rate:
                others = [lab for lab in labels if lab != assignments[tid]]
                assignments[tid] = others[int(rng.integers(len(others)))]
    support: dict[int, int] = {}
    for lab in assignments.values():
        if lab is not None:
            support[lab] = support.get(lab, 0) + 1
    return Labeling(assignments, support, {}, max(labels, default=-1) + 1)
