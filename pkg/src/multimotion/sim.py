"""Synthetic multi-body stereo scene generator with exact ground truth.

Bodies (the camera is body 0) follow piecewise-constant world twists,
integrated in closed form per segment. Landmarks are sampled uniformly in a
body-fixed box (or a world box for the static background), projected through
the shared stereo model, masked by a scripted occlusion list, and emitted as
tracklets. A landmark whose visibility is interrupted starts a fresh tracklet
when it reappears, which is what forces re-association through motion closure
downstream.

Ground truth stores, per body, the motion relative to frame 0 expressed in
the initial camera frame (the package's geocentric convention) plus the
matching twist, so constant-twist segments satisfy the motion prior exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import se3
from .backend import kernels
from .camera import MIN_DEPTH, StereoModel, Tracklet, project
from .errors import EmptyScene, ScenarioFormatError

FULL_BODY = "full_body"
SCREEN_RECT = "screen_rect"
DROPOUT = "dropout_rate"


@dataclass
class MotionSpec:
    """Initial world pose plus a piecewise-constant world twist profile."""

    initial_pose: np.ndarray
    velocity_profile: list[tuple[float, np.ndarray]]

    def __post_init__(self):
        self.initial_pose = np.asarray(self.initial_pose, dtype=float)
        profile = [(float(t), np.asarray(v, dtype=float)) for t, v in self.velocity_profile]
        if not profile:
            profile = [(0.0, np.zeros(6))]
        if profile[0][0] != 0.0:
            raise ScenarioFormatError("velocity_profile must start at time 0")
        starts = [t for t, _ in profile]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ScenarioFormatError("velocity_profile start times must strictly increase")
        self.velocity_profile = profile

    def pose_at(self, t: float) -> np.ndarray:
        pose = self.initial_pose
        for i, (start, twist) in enumerate(self.velocity_profile):
            end = (
                self.velocity_profile[i + 1][0]
                if i + 1 < len(self.velocity_profile)
                else math.inf
            )
            span = min(t, end) - start
            if span <= 0.0:
                break
            pose = kernels.exp(np.ascontiguousarray(span * twist)) @ pose
        return pose

    def twist_at(self, t: float) -> np.ndarray:
        active = self.velocity_profile[0][1]
        for start, twist in self.velocity_profile:
            if t >= start:
                active = twist
            else:
                break
        return active.copy()


@dataclass
class BodySpec:
    body_id: int
    motion: MotionSpec
    landmark_count: int
    landmark_extent: np.ndarray  # box edge lengths, metres

    def __post_init__(self):
        self.landmark_extent = np.broadcast_to(
            np.asarray(self.landmark_extent, dtype=float), (3,)
        ).copy()


@dataclass
class OcclusionEvent:
    mode: str
    start_frame: int
    end_frame: int
    body: int | None = None
    rect: np.ndarray | None = None  # (u_min, v_min, u_max, v_max)
    rate: float = 0.0

    def __post_init__(self):
        if self.start_frame > self.end_frame:
            raise ScenarioFormatError("occlusion start_frame must not exceed end_frame")
        if self.mode not in (FULL_BODY, SCREEN_RECT, DROPOUT):
            raise ScenarioFormatError(f"unknown occlusion mode {self.mode!r}")
        if self.mode == SCREEN_RECT:
            if self.rect is None:
                raise ScenarioFormatError("screen_rect occlusion requires rect")
            self.rect = np.asarray(self.rect, dtype=float)
        elif self.body is None:
            raise ScenarioFormatError(f"{self.mode} occlusion requires body")

    def active(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame


@dataclass
class WorldSpec:
    landmark_count: int
    center: np.ndarray
    extent: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.extent = np.asarray(self.extent, dtype=float)


@dataclass
class ClutterSpec:
    count: int = 0
    mean_length: int = 8


@dataclass
class Scenario:
    name: str
    frame_rate: float
    frame_count: int
    camera: StereoModel
    noise_px: float
    world: WorldSpec
    camera_motion: MotionSpec
    bodies: list[BodySpec] = field(default_factory=list)
    occlusions: list[OcclusionEvent] = field(default_factory=list)
    clutter: ClutterSpec = field(default_factory=ClutterSpec)
    seed: int = 0
    estimation: dict = field(default_factory=dict)


@dataclass
class GroundTruth:
    """Exact per-frame states and tracklet provenance."""

    times: np.ndarray
    poses: dict[int, np.ndarray]  # body id -> (K, 4, 4), motion rel. frame 0 in C1 coords
    twists: dict[int, np.ndarray]  # body id -> (K, 6)
    membership: dict[int, int | None]  # tracklet id -> body id (None = clutter)
    visible_frames: dict[int, list[int]]


@dataclass
class FrameObservations:
    index: int
    time: float
    observations: list[tuple[int, np.ndarray]]


@dataclass
class SimResult:
    scenario: Scenario
    frames: list[FrameObservations]
    tracklets: dict[int, Tracklet]
    ground_truth: GroundTruth


def generate(scenario: Scenario, seed: int | None = None) -> SimResult:
    """Simulate the scenario; deterministic for a given scenario and seed."""
    if scenario.world.landmark_count == 0 and not scenario.bodies:
        raise EmptyScene("scenario has no landmarks and no bodies")
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    model = scenario.camera
    times = np.arange(scenario.frame_count) / scenario.frame_rate

    # Landmark table: (owner body id or None, coordinates in owner frame).
    landmarks: list[tuple[int | None, np.ndarray]] = []
    half = 0.5 * scenario.world.extent
    for _ in range(scenario.world.landmark_count):
        point = scenario.world.center + rng.uniform(-half, half)
        landmarks.append((None, np.append(point, 1.0)))
    for body in scenario.bodies:
        half_body = 0.5 * body.landmark_extent
        for _ in range(body.landmark_count):
            point = rng.uniform(-half_body, half_body)
            landmarks.append((body.body_id, np.append(point, 1.0)))

    camera_poses = np.stack([scenario.camera_motion.pose_at(t) for t in times])
    body_poses = {
        body.body_id: np.stack([body.motion.pose_at(t) for t in times])
        for body in scenario.bodies
    }

    frames: list[FrameObservations] = []
    tracklets: dict[int, Tracklet] = {}
    membership: dict[int, int | None] = {}
    visible_frames: dict[int, list[int]] = {}
    active_tracklet: dict[int, int | None] = {i: None for i in range(len(landmarks))}
    next_tracklet = 0

    rect_events = [e for e in scenario.occlusions if e.mode == SCREEN_RECT]
    body_events = [e for e in scenario.occlusions if e.mode == FULL_BODY]
    dropout_events = [e for e in scenario.occlusions if e.mode == DROPOUT]

    for k, t in enumerate(times):
        cam_inv = se3.inverse(camera_poses[k])
        observations: list[tuple[int, np.ndarray]] = []
        for lm_index, (owner, coords) in enumerate(landmarks):
            if owner is None:
                world_point = coords
            else:
                world_point = body_poses[owner][k] @ coords
            point_cam = cam_inv @ world_point
            visible = point_cam[2] > MIN_DEPTH
            if visible:
                y = project(model, point_cam)
                visible = (
                    0.0 <= y[0] < model.image_width
                    and 0.0 <= y[2] < model.image_width
                    and 0.0 <= y[1] < model.image_height
                    and 0.0 <= y[3] < model.image_height
                )
            if visible:
                for event in body_events:
                    if event.body == owner and event.active(k):
                        visible = False
                        break
            if visible:
                for event in rect_events:
                    if event.active(k):
                        r = event.rect
                        if r[0] <= y[0] <= r[2] and r[1] <= y[1] <= r[3]:
                            visible = False
                            break
            if visible:
                for event in dropout_events:
                    if event.body == owner and event.active(k):
                        if rng.uniform() < event.rate:
                            visible = False
                        break
            if not visible:
                active_tracklet[lm_index] = None
                continue
            if scenario.noise_px > 0.0:
                y = y + rng.normal(0.0, scenario.noise_px, size=4)
            tid = active_tracklet[lm_index]
            if tid is None:
                tid = next_tracklet
                next_tracklet += 1
                active_tracklet[lm_index] = tid
                tracklets[tid] = Tracklet(tid)
                membership[tid] = 0 if owner is None else owner
                visible_frames[tid] = []
            tracklets[tid].add(k, y)
            visible_frames[tid].append(k)
            observations.append((tid, y))
        frames.append(FrameObservations(k, float(t), observations))

    # Clutter: uninformative random-walk tracklets, membership None.
    for _ in range(scenario.clutter.count):
        birth = int(rng.integers(0, max(1, scenario.frame_count - 2)))
        length = 2 + int(rng.geometric(1.0 / max(1, scenario.clutter.mean_length)))
        u = rng.uniform(model.image_width * 0.1, model.image_width * 0.9)
        v = rng.uniform(model.image_height * 0.1, model.image_height * 0.9)
        disparity = rng.uniform(2.0, 40.0)
        tid = next_tracklet
        next_tracklet += 1
        tracklets[tid] = Tracklet(tid)
        membership[tid] = None
        visible_frames[tid] = []
        for k in range(birth, min(scenario.frame_count, birth + length)):
            y = np.array([u, v, u - disparity, v])
            if scenario.noise_px > 0.0:
                y = y + rng.normal(0.0, scenario.noise_px, size=4)
            tracklets[tid].add(k, y)
            visible_frames[tid].append(k)
            frames[k].observations.append((tid, y))
            u += rng.uniform(-8.0, 8.0)
            v += rng.uniform(-8.0, 8.0)
            disparity = max(1.0, disparity + rng.uniform(-1.0, 1.0))

    a1 = camera_poses[0]
    a1_inv = se3.inverse(a1)
    a1_adj_inv = kernels.adjoint(np.ascontiguousarray(a1_inv))
    gt_poses = {0: np.stack([a1_inv @ camera_poses[k] for k in range(len(times))])}
    gt_twists = {
        0: np.stack(
            [a1_adj_inv @ scenario.camera_motion.twist_at(t) for t in times]
        )
    }
    for body in scenario.bodies:
        poses_b = body_poses[body.body_id]
        b1_inv = se3.inverse(poses_b[0])
        gt_poses[body.body_id] = np.stack(
            [a1_inv @ poses_b[k] @ b1_inv @ a1 for k in range(len(times))]
        )
        gt_twists[body.body_id] = np.stack(
            [a1_adj_inv @ body.motion.twist_at(t) for t in times]
        )
    ground_truth = GroundTruth(times, gt_poses, gt_twists, membership, visible_frames)
    return SimResult(scenario, frames, tracklets, ground_truth)


# --- scenario files ---------------------------------------------------------

_TOP_FIELDS = {
    "name",
    "frame_rate",
    "frame_count",
    "seed",
    "camera",
    "camera_motion",
    "world",
    "bodies",
    "occlusions",
    "clutter",
    "estimation",
}
_CAMERA_FIELDS = {"fu", "fv", "cu", "cv", "baseline", "image_width", "image_height", "noise_px"}
_MOTION_FIELDS = {"initial_position", "initial_rotation_rpy", "velocity_profile"}
_PROFILE_FIELDS = {"start_time", "twist"}
_WORLD_FIELDS = {"landmark_count", "center", "extent"}
_BODY_FIELDS = {"id", "landmark_count", "landmark_extent"} | _MOTION_FIELDS
_OCCLUSION_FIELDS = {"mode", "start_frame", "end_frame", "body", "rect", "rate"}
_CLUTTER_FIELDS = {"count", "mean_length"}
_ESTIMATION_FIELDS = {
    "window",
    "closure_threshold",
    "velocity_weight",
    "occlusion_horizon",
    "qc_diagonal",
    "measurement_noise_px",
    "residual_threshold_px",
    "min_support",
    "proposals_per_round",
    "max_rounds",
    "min_obs_current",
    "ego_velocity_gate",
    "oracle_flip_rate",
}


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ScenarioFormatError(f"{context}: missing required field '{key}'")
    return mapping[key]


def _check_fields(mapping, allowed: set, context: str):
    if not isinstance(mapping, dict):
        raise ScenarioFormatError(f"{context}: expected a mapping")
    for key in mapping:
        if key not in allowed:
            raise ScenarioFormatError(f"{context}.{key}: unknown field")


def _vec(value, n: int, context: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ScenarioFormatError(f"{context}: expected {n} numbers")
    return arr


def _motion_from_dict(data: dict, context: str) -> MotionSpec:
    position = _vec(data.get("initial_position", [0.0, 0.0, 0.0]), 3, f"{context}.initial_position")
    rpy = _vec(data.get("initial_rotation_rpy", [0.0, 0.0, 0.0]), 3, f"{context}.initial_rotation_rpy")
    pose = np.eye(4)
    pose[:3, :3] = (
        se3.so3_exp(np.array([0.0, 0.0, rpy[2]]))
        @ se3.so3_exp(np.array([0.0, rpy[1], 0.0]))
        @ se3.so3_exp(np.array([rpy[0], 0.0, 0.0]))
    )
    pose[:3, 3] = position
    profile = []
    for i, entry in enumerate(data.get("velocity_profile", [])):
        _check_fields(entry, _PROFILE_FIELDS, f"{context}.velocity_profile[{i}]")
        profile.append(
            (
                float(_require(entry, "start_time", f"{context}.velocity_profile[{i}]")),
                _vec(_require(entry, "twist", f"{context}.velocity_profile[{i}]"), 6,
                     f"{context}.velocity_profile[{i}].twist"),
            )
        )
    return MotionSpec(pose, profile)


def scenario_from_dict(data: dict) -> Scenario:
    _check_fields(data, _TOP_FIELDS, "scenario")
    name = str(_require(data, "name", "scenario"))
    frame_rate = float(_require(data, "frame_rate", "scenario"))
    frame_count = int(_require(data, "frame_count", "scenario"))
    if frame_rate <= 0:
        raise ScenarioFormatError("scenario.frame_rate: must be positive")
    if frame_count < 2:
        raise ScenarioFormatError("scenario.frame_count: must be at least 2")
    cam_data = _require(data, "camera", "scenario")
    _check_fields(cam_data, _CAMERA_FIELDS, "camera")
    noise_px = float(cam_data.get("noise_px", 0.0))
    model = StereoModel(
        fu=float(_require(cam_data, "fu", "camera")),
        fv=float(_require(cam_data, "fv", "camera")),
        cu=float(_require(cam_data, "cu", "camera")),
        cv=float(_require(cam_data, "cv", "camera")),
        baseline=float(_require(cam_data, "baseline", "camera")),
        image_width=int(cam_data.get("image_width", 640)),
        image_height=int(cam_data.get("image_height", 480)),
        noise_cov=np.eye(4) * max(noise_px, 1.0) ** 2,
    )
    world_data = _require(data, "world", "scenario")
    _check_fields(world_data, _WORLD_FIELDS, "world")
    world = WorldSpec(
        landmark_count=int(_require(world_data, "landmark_count", "world")),
        center=_vec(world_data.get("center", [0.0, 0.0, 8.0]), 3, "world.center"),
        extent=_vec(world_data.get("extent", [10.0, 6.0, 4.0]), 3, "world.extent"),
    )
    camera_motion = _motion_from_dict(data.get("camera_motion", {}), "camera_motion")
    if "camera_motion" in data:
        _check_fields(data["camera_motion"], _MOTION_FIELDS, "camera_motion")
    bodies = []
    seen_ids = {0}
    for i, body_data in enumerate(data.get("bodies", [])):
        context = f"bodies[{i}]"
        _check_fields(body_data, _BODY_FIELDS, context)
        body_id = int(_require(body_data, "id", context))
        if body_id in seen_ids:
            raise ScenarioFormatError(f"{context}.id: duplicate body id {body_id}")
        seen_ids.add(body_id)
        extent = body_data.get("landmark_extent", 1.0)
        extent_arr = np.broadcast_to(np.asarray(extent, dtype=float), (3,))
        bodies.append(
            BodySpec(
                body_id=body_id,
                motion=_motion_from_dict(body_data, context),
                landmark_count=int(_require(body_data, "landmark_count", context)),
                landmark_extent=extent_arr,
            )
        )
    occlusions = []
    for i, occ_data in enumerate(data.get("occlusions", [])):
        context = f"occlusions[{i}]"
        _check_fields(occ_data, _OCCLUSION_FIELDS, context)
        mode = str(_require(occ_data, "mode", context))
        occlusions.append(
            OcclusionEvent(
                mode=mode,
                start_frame=int(_require(occ_data, "start_frame", context)),
                end_frame=int(_require(occ_data, "end_frame", context)),
                body=int(occ_data["body"]) if "body" in occ_data else None,
                rect=_vec(occ_data["rect"], 4, f"{context}.rect") if "rect" in occ_data else None,
                rate=float(occ_data.get("rate", 0.0)),
            )
        )
    clutter_data = data.get("clutter", {})
    _check_fields(clutter_data, _CLUTTER_FIELDS, "clutter")
    clutter = ClutterSpec(
        count=int(clutter_data.get("count", 0)),
        mean_length=int(clutter_data.get("mean_length", 8)),
    )
    estimation = data.get("estimation", {})
    _check_fields(estimation, _ESTIMATION_FIELDS, "estimation")
    return Scenario(
        name=name,
        frame_rate=frame_rate,
        frame_count=frame_count,
        camera=model,
        noise_px=noise_px,
        world=world,
        camera_motion=camera_motion,
        bodies=bodies,
        occlusions=occlusions,
        clutter=clutter,
        seed=int(data.get("seed", 0)),
        estimation=dict(estimation),
    )


def _motion_to_dict(motion: MotionSpec) -> dict:
    pose = motion.initial_pose
    rot = pose[:3, :3]
    # Recover roll-pitch-yaw from the Rz Ry Rx factorization.
    pitch = math.asin(max(-1.0, min(1.0, -rot[2, 0])))
    roll = math.atan2(rot[2, 1], rot[2, 2])
    yaw = math.atan2(rot[1, 0], rot[0, 0])
    return {
        "initial_position": [float(x) for x in pose[:3, 3]],
        "initial_rotation_rpy": [roll, pitch, yaw],
        "velocity_profile": [
            {"start_time": t, "twist": [float(x) for x in v]}
            for t, v in motion.velocity_profile
        ],
    }


def scenario_to_dict(scenario: Scenario) -> dict:
    model = scenario.camera
    out = {
        "name": scenario.name,
        "frame_rate": scenario.frame_rate,
        "frame_count": scenario.frame_count,
        "seed": scenario.seed,
        "camera": {
            "fu": model.fu,
            "fv": model.fv,
            "cu": model.cu,
            "cv": model.cv,
            "baseline": model.baseline,
            "image_width": model.image_width,
            "image_height": model.image_height,
            "noise_px": scenario.noise_px,
        },
        "world": {
            "landmark_count": scenario.world.landmark_count,
            "center": [float(x) for x in scenario.world.center],
            "extent": [float(x) for x in scenario.world.extent],
        },
        "camera_motion": _motion_to_dict(scenario.camera_motion),
        "bodies": [
            {
                "id": body.body_id,
                "landmark_count": body.landmark_count,
                "landmark_extent": [float(x) for x in body.landmark_extent],
                **_motion_to_dict(body.motion),
            }
            for body in scenario.bodies
        ],
        "occlusions": [],
        "clutter": {"count": scenario.clutter.count, "mean_length": scenario.clutter.mean_length},
        "estimation": dict(scenario.estimation),
    }
    for event in scenario.occlusions:
        entry = {
            "mode": event.mode,
            "start_frame": event.start_frame,
            "end_frame": event.end_frame,
        }
        if event.body is not None:
            entry["body"] = event.body
        if event.rect is not None:
            entry["rect"] = [float(x) for x in event.rect]
        if event.mode == DROPOUT:
            entry["rate"] = event.rate
        out["occlusions"].append(entry)
    return out


def import_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise ScenarioFormatError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioFormatError(f"{path}: scenario file must contain a mapping")
    return scenario_from_dict(data)


def export_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(scenario_to_dict(scenario), handle, sort_keys=False)


# --- columnar exports -------------------------------------------------------


def observation_table(result: SimResult) -> str:
    lines = ["tracklet_id,frame,u_l,v_l,u_r,v_r"]
    for frame in result.frames:
        for tid, y in frame.observations:
            lines.append(f"{tid},{frame.index},{y[0]!r},{y[1]!r},{y[2]!r},{y[3]!r}")
    return "\n".join(lines) + "\n"


def ground_truth_table(result: SimResult) -> str:
    gt = result.ground_truth
    lines = ["body_id,frame," + ",".join(f"p{i}{j}" for i in range(3) for j in range(4)) + ",w0,w1,w2,w3,w4,w5"]
    for body_id in sorted(gt.poses):
        poses = gt.poses[body_id]
        twists = gt.twists[body_id]
        for k in range(len(gt.times)):
            pose_cells = ",".join(repr(float(x)) for x in poses[k][:3].ravel())
            twist_cells = ",".join(repr(float(x)) for x in twists[k])
            lines.append(f"{body_id},{k},{pose_cells},{twist_cells}")
    return "\n".join(lines) + "\n"


def membership_table(result: SimResult) -> str:
    gt = result.ground_truth
    lines = ["tracklet_id,body_id"]
    for tid in sorted(gt.membership):
        owner = gt.membership[tid]
        lines.append(f"{tid},{'' if owner is None else owner}")
    return "\n".join(lines) + "\n"
