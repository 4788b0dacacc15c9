import numpy as np
import pytest

from multimotion import se3, sim, wnoa
from multimotion.camera import StereoModel, project, triangulate
from multimotion.errors import ScenarioFormatError


def default_model(noise=0.0):
    return StereoModel(
        fu=400.0,
        fv=400.0,
        cu=300.0,
        cv=300.0,
        baseline=0.12,
        image_width=600,
        image_height=600,
        noise_cov=np.eye(4) * max(noise, 1.0) ** 2,
    )


def build_scenario(
    frame_count=10,
    noise_px=0.0,
    camera_twist=(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    bodies=(),
    occlusions=(),
    seed=0,
    world_count=40,
    clutter=0,
):
    return sim.Scenario(
        name="test",
        frame_rate=10.0,
        frame_count=frame_count,
        camera=default_model(noise_px),
        noise_px=noise_px,
        world=sim.WorldSpec(world_count, np.array([0.0, 0.0, 8.0]), np.array([14.0, 10.0, 6.0])),
        camera_motion=sim.MotionSpec(np.eye(4), [(0.0, np.asarray(camera_twist, dtype=float))]),
        bodies=list(bodies),
        occlusions=list(occlusions),
        clutter=sim.ClutterSpec(count=clutter),
        seed=seed,
    )


def make_body(body_id, position, twist, count=20, extent=0.8, profile_extra=()):
    pose = np.eye(4)
    pose[:3, 3] = position
    profile = [(0.0, np.asarray(twist, dtype=float))] + [
        (t, np.asarray(v, dtype=float)) for t, v in profile_extra
    ]
    return sim.BodySpec(body_id, sim.MotionSpec(pose, profile), count, np.full(3, extent))


class TestGenerate:
    def test_static_scene_constant_observations(self):
        result = sim.generate(build_scenario(frame_count=6))
        for tracklet in result.tracklets.values():
            ys = np.stack([tracklet.observations[f] for f in tracklet.frames()])
            assert np.max(np.abs(ys - ys[0])) < 1e-12

    def test_translating_camera_disparity_sequence(self):
        # Camera moving at (0, 0, 1) m/s toward a point 5 m deep on the axis:
        # disparity grows as fu * b / (5 - 0.1 k).
        scenario = build_scenario(frame_count=5, camera_twist=(0.0, 0.0, 1.0, 0, 0, 0), world_count=0)
        scenario.world = sim.WorldSpec(1, np.array([0.0, 0.0, 5.0]), np.zeros(3))
        result = sim.generate(scenario)
        tracklet = result.tracklets[0]
        model = scenario.camera
        for k in tracklet.frames():
            depth = 5.0 - 0.1 * k
            expected = model.fu * model.baseline / depth
            y = tracklet.observations[k]
            assert abs((y[0] - y[2]) - expected) < 1e-10

    def test_full_body_occlusion_removes_observations(self):
        body = make_body(1, [1.0, 0.0, 6.0], [0.1, 0, 0, 0, 0, 0])
        occ = sim.OcclusionEvent(sim.FULL_BODY, 3, 5, body=1)
        result = sim.generate(build_scenario(frame_count=8, bodies=[body], occlusions=[occ]))
        gt = result.ground_truth
        for frame in result.frames:
            body_obs = [tid for tid, _ in frame.observations if gt.membership[tid] == 1]
            if 3 <= frame.index <= 5:
                assert not body_obs
            else:
                assert body_obs

    def test_occlusion_splits_tracklets(self):
        body = make_body(1, [1.0, 0.0, 6.0], [0.0] * 6)
        occ = sim.OcclusionEvent(sim.FULL_BODY, 3, 4, body=1)
        result = sim.generate(build_scenario(frame_count=9, bodies=[body], occlusions=[occ]))
        gt = result.ground_truth
        body_tracklets = [tid for tid, owner in gt.membership.items() if owner == 1]
        pre = [tid for tid in body_tracklets if max(gt.visible_frames[tid]) < 3]
        post = [tid for tid in body_tracklets if min(gt.visible_frames[tid]) > 4]
        assert pre and post
        assert not set(pre) & set(post)

    def test_noise_free_reprojection_from_ground_truth(self):
        body = make_body(1, [1.0, 0.5, 6.0], [-0.3, 0.1, 0.0, 0.0, 0.0, 0.1])
        scenario = build_scenario(
            frame_count=10, camera_twist=(0.3, 0.0, 0.1, 0.0, 0.04, 0.0), bodies=[body]
        )
        result = sim.generate(scenario)
        gt = result.ground_truth
        model = scenario.camera
        cam_rel = gt.poses[0]
        centroid = np.eye(4)
        centroid[:3, 3] = [0.5, -0.3, -6.0]  # arbitrary; must cancel
        worst = 0.0
        for tid, tracklet in result.tracklets.items():
            owner = gt.membership[tid]
            frames = tracklet.frames()
            anchor = frames[0]
            point = triangulate(model, tracklet.observations[anchor])
            for f in frames:
                t_ck = se3.inverse(cam_rel[f]) @ cam_rel[anchor]
                if owner == 0:
                    z = t_ck @ point
                else:
                    motion_c1 = gt.poses[owner][f] @ se3.inverse(gt.poses[owner][anchor])
                    to_anchor = se3.inverse(cam_rel[anchor])
                    motion_local = to_anchor @ motion_c1 @ cam_rel[anchor]
                    body_motion = centroid @ se3.inverse(motion_local) @ se3.inverse(centroid)
                    chain = t_ck @ se3.inverse(centroid) @ se3.inverse(body_motion) @ centroid
                    z = chain @ point
                worst = max(worst, np.max(np.abs(project(model, z) - tracklet.observations[f])))
        assert worst < 1e-10

    def test_ground_truth_satisfies_prior_within_segments(self):
        body = make_body(
            1,
            [1.0, 0.0, 6.0],
            [0.2, 0, 0, 0, 0, 0.1],
            profile_extra=[(0.45, [0.0, 0.2, 0, 0, 0, 0])],
        )
        scenario = build_scenario(
            frame_count=10, camera_twist=(0.1, 0.0, 0.0, 0.0, 0.02, 0.0), bodies=[body]
        )
        gt = sim.generate(scenario).ground_truth
        for body_id, poses in gt.poses.items():
            twists = gt.twists[body_id]
            for k in range(len(gt.times) - 1):
                if body_id == 1 and k == 4:  # velocity switch at t = 0.45
                    continue
                k0 = wnoa.Knot(gt.times[k], poses[k], twists[k])
                k1 = wnoa.Knot(gt.times[k + 1], poses[k + 1], twists[k + 1])
                assert np.max(np.abs(wnoa.prior_error(k0, k1))) < 1e-10

    def test_seeded_determinism_byte_identical(self):
        body = make_body(1, [1.0, 0.0, 6.0], [0.2, 0, 0, 0, 0, 0])
        scenario = build_scenario(frame_count=8, noise_px=1.0, bodies=[body], clutter=5, seed=11)
        first = sim.observation_table(sim.generate(scenario))
        second = sim.observation_table(sim.generate(scenario))
        assert first == second
        third = sim.observation_table(sim.generate(scenario, seed=12))
        assert first != third

    def test_empty_scene(self):
        scenario = build_scenario(world_count=0)
        with pytest.raises(sim.EmptyScene):
            sim.generate(scenario)

    def test_clutter_membership_is_none(self):
        result = sim.generate(build_scenario(frame_count=8, clutter=4))
        owners = set(result.ground_truth.membership.values())
        assert None in owners


class TestScenarioFiles:
    def test_round_trip(self, tmp_path):
        body = make_body(2, [0.5, 0.2, 5.0], [0.1, 0, 0, 0, 0, 0.2])
        occ = sim.OcclusionEvent(sim.FULL_BODY, 2, 4, body=2)
        scenario = build_scenario(frame_count=7, noise_px=0.5, bodies=[body], occlusions=[occ])
        scenario.estimation = {"window": 8, "closure_threshold": 1.0}
        path = tmp_path / "round.scn"
        sim.export_scenario(scenario, path)
        loaded = sim.import_scenario(path)
        assert sim.scenario_to_dict(loaded) == sim.scenario_to_dict(scenario)

    def test_missing_required_field(self, tmp_path):
        path = tmp_path / "bad.scn"
        path.write_text("name: x\nframe_count: 5\n")
        with pytest.raises(ScenarioFormatError, match="frame_rate"):
            sim.import_scenario(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.scn"
        path.write_text(
            "name: x\nframe_rate: 10\nframe_count: 5\n"
            "camera: {fu: 400, fv: 400, cu: 300, cv: 300, baseline: 0.1}\n"
            "world: {landmark_count: 5}\nbogus_field: 1\n"
        )
        with pytest.raises(ScenarioFormatError, match="bogus_field"):
            sim.import_scenario(path)

    def test_nested_unknown_field_has_path(self, tmp_path):
        path = tmp_path / "bad.scn"
        path.write_text(
            "name: x\nframe_rate: 10\nframe_count: 5\n"
            "camera: {fu: 400, fv: 400, cu: 300, cv: 300, baseline: 0.1}\n"
            "world: {landmark_count: 5}\n"
            "occlusions:\n- {mode: full_body, start_frame: 1, end_frame: 2, body: 1, oops: 3}\n"
        )
        with pytest.raises(ScenarioFormatError, match=r"occlusions\[0\].oops"):
            sim.import_scenario(path)


class TestTables:
    def test_observation_table_shape(self):
        result = sim.generate(build_scenario(frame_count=4))
        lines = sim.observation_table(result).strip().split("\n")
        assert lines[0] == "tracklet_id,frame,u_l,v_l,u_r,v_r"
        assert len(lines) == 1 + sum(len(f.observations) for f in result.frames)

    def test_membership_table(self):
        body = make_body(1, [1.0, 0.0, 6.0], [0.0] * 6)
        result = sim.generate(build_scenario(frame_count=4, bodies=[body]))
        table = sim.membership_table(result)
        assert table.startswith("tracklet_id,body_id\n")
        assert ",1\n" in table
