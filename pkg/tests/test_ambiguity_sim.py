import collections
import math

import numpy as np
import pytest

from mhslam import ambiguity_sim as sim
from mhslam import pose_algebra as pa
from mhslam.errors import InvalidInputError
from mhslam.factor_graph import VariableKey
from mhslam.shape_metrics import Metric
from mhslam.shape_metrics import adds_error
from mhslam.shape_metrics import best_hypothesis
from mhslam.shape_metrics import box_model
from mhslam.shape_metrics import clamp_model
from mhslam.shape_metrics import cylinder_model

EXACT = dict(measurement_sigma_rot=0.0, measurement_sigma_trans=0.0)


def _bearing(pose):
    x, y, _ = pose.translation
    return math.atan2(y, x) % (2 * math.pi)


class TestSymmetry:
    def test_transforms(self):
        assert sim.NoSymmetry().transforms() == ()
        assert len(sim.DiscreteRotations((0.0, 0.0, 1.0), 4).transforms()) == 3
        assert len(sim.AxisContinuous((0.0, 1.0, 0.0), 8).transforms()) == 7
        (half_turn,) = sim.MirrorPair((1.0, 0.0, 0.0)).transforms()
        assert pa.rotation_angular_distance(half_turn, pa.identity()) == pytest.approx(math.pi)

    @pytest.mark.parametrize(
        "build",
        [
            lambda: sim.DiscreteRotations((0.0, 0.0, 2.0), 3),
            lambda: sim.DiscreteRotations((0.0, 0.0, 1.0), 1),
            lambda: sim.MirrorPair((1.0, 1.0, 0.0)),
            lambda: sim.AxisContinuous((0.0, 0.0, 1.0), 0),
        ],
    )
    def test_invalid(self, build):
        with pytest.raises(InvalidInputError):
            build()


class TestSimConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"frame_count": 1}, {"p_cov": 1.5}, {"p_spur": -0.1}, {"hypothesis_count": 0}, {"inner_radius": 0.0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidInputError):
            sim.SimConfig(**kwargs)

    def test_duplicate_object_ids(self):
        objects = sim.default_objects()
        with pytest.raises(InvalidInputError):
            sim.SimConfig(objects=(objects[0], objects[0]))


class TestWorld:
    def test_default_world(self):
        objects = sim.generate_world(sim.SimConfig())
        assert [o.id for o in objects] == [0, 1, 2, 3, 4]
        assert sum(o.symmetry.kind != "none" for o in objects) >= 2
        for o in objects:
            assert np.linalg.norm(o.pose_in_world.translation) == pytest.approx(4.0)

    def test_deterministic(self):
        a = sim.generate_world(sim.SimConfig(seed=1))
        b = sim.generate_world(sim.SimConfig(seed=1))
        for oa, ob in zip(a, b):
            assert oa.pose_in_world.matrix().tolist() == ob.pose_in_world.matrix().tolist()

    def test_custom_world(self):
        pose = pa.Pose3.from_translation([1.0, 2.0, 0.0])
        obj = sim.SimObject(7, pose, box_model(7, "box", (0.1, 0.1, 0.1)))
        (only,) = sim.generate_world(sim.SimConfig(objects=(obj,)))
        assert only.id == 7 and only.pose_in_world is pose
        assert only.key.index == 7 and not only.key.is_robot


class TestTrajectory:
    def test_inner_only_quarter_turns(self):
        poses = sim.generate_trajectory(sim.SimConfig(frame_count=4, inner_fraction=1.0))
        assert len(poses) == 4
        bearings = [_bearing(p) for p in poses]
        np.testing.assert_allclose(bearings, [0.0, math.pi / 2, math.pi, 3 * math.pi / 2], atol=1e-12)
        for p in poses:
            assert np.linalg.norm(p.translation[:2]) == pytest.approx(2.5, abs=1e-12)
            assert p.translation[2] == 0.0

    def test_cameras_face_the_ring(self):
        poses = sim.generate_trajectory(sim.SimConfig(frame_count=4, inner_fraction=1.0))
        for p in poses:
            optical_axis = p.rotation_matrix[:, 2]
            radial = p.translation / np.linalg.norm(p.translation)
            np.testing.assert_allclose(optical_axis, radial, atol=1e-12)

    def test_default_layout(self):
        config = sim.SimConfig()
        poses = sim.generate_trajectory(config)
        assert len(poses) == config.frame_count
        inner = poses[:200]
        for p in inner:
            assert np.linalg.norm(p.translation) == pytest.approx(2.5, abs=1e-12)
        assert np.linalg.norm(poses[-1].translation) == pytest.approx(6.0, abs=1e-12)
        # loop closure: the inner circle ends one bearing step short of its start
        gap = np.linalg.norm(inner[-1].translation - inner[0].translation)
        assert gap == pytest.approx(2 * 2.5 * math.sin(math.pi / 200), rel=1e-9)
        assert pa.rotation_angular_distance(inner[-1], inner[0]) == pytest.approx(2 * math.pi / 200, rel=1e-6)

    def test_steps_respect_caps(self):
        config = sim.SimConfig()
        poses = sim.generate_trajectory(config)
        for a, b in zip(poses, poses[1:]):
            assert np.linalg.norm(b.translation - a.translation) <= config.max_step_trans + 1e-9
            assert pa.rotation_angular_distance(a, b) <= config.max_step_rot + 1e-9

    def test_transition_skipped_when_frames_are_short(self):
        poses = sim.generate_trajectory(sim.SimConfig(frame_count=6))
        assert len(poses) == 6
        assert [round(float(np.linalg.norm(p.translation)), 9) for p in poses] == [2.5] * 3 + [6.0] * 3


class TestOdometry:
    def test_noise_free(self):
        config = sim.SimConfig(frame_count=10, odometry_sigma_rot=0.0, odometry_sigma_trans=0.0)
        traj = sim.generate_trajectory(config)
        factors = sim.simulate_odometry(traj, config, np.random.default_rng(0))
        assert len(factors) == 9
        for i, f in enumerate(factors):
            assert (f.key_from.index, f.key_to.index) == (i, i + 1)
            assert f.measurement.matrix().tolist() == pa.between(traj[i], traj[i + 1]).matrix().tolist()

    def test_reproducible(self):
        config = sim.SimConfig(frame_count=20)
        traj = sim.generate_trajectory(config)
        a = sim.simulate_odometry(traj, config, np.random.default_rng(5))
        b = sim.simulate_odometry(traj, config, np.random.default_rng(5))
        assert [f.measurement.matrix().tobytes() for f in a] == [f.measurement.matrix().tobytes() for f in b]

    def test_noise_statistics(self):
        config = sim.SimConfig(frame_count=1001, odometry_sigma_rot=0.005, odometry_sigma_trans=0.01)
        traj = sim.generate_trajectory(config)
        factors = sim.simulate_odometry(traj, config, np.random.default_rng(11))
        noise = [pa.compose(f.measurement, pa.inverse(pa.between(a, b))) for f, a, b in zip(factors, traj, traj[1:])]
        eps = np.array([pa.log(p) for p in noise])
        np.testing.assert_allclose(eps[:, 3:].std(axis=0), 0.01, rtol=0.1)
        np.testing.assert_allclose(eps[:, :3].std(axis=0), 0.005, rtol=0.1)

    def test_information(self):
        config = sim.SimConfig(odometry_sigma_rot=0.1, odometry_sigma_trans=0.5)
        np.testing.assert_allclose(np.diag(config.odometry_information), [100.0] * 3 + [4.0] * 3)

    def test_needs_two_poses(self):
        with pytest.raises(InvalidInputError):
            sim.simulate_odometry([pa.identity()], sim.SimConfig(), np.random.default_rng(0))


class TestHypotheses:
    def test_single_exact(self, rng):
        truth = pa.random_pose(rng)
        config = sim.SimConfig(hypothesis_count=1, p_cov=1.0, p_spur=0.0, **EXACT)
        hyps = sim.generate_hypotheses(truth, sim.NoSymmetry(), config, rng)
        assert len(hyps) == 1 and hyps.weights == (1.0,)
        assert hyps.hypotheses[0].matrix().tolist() == truth.matrix().tolist()

    def test_mirror_pair(self, rng):
        truth = pa.random_pose(rng)
        model = box_model(0, "box", (0.16, 0.06, 0.21))
        config = sim.SimConfig(hypothesis_count=2, p_cov=1.0, p_spur=0.0, **EXACT)
        hyps = sim.generate_hypotheses(truth, sim.MirrorPair((0.0, 0.0, 1.0)), config, rng)
        angles = sorted(pa.rotation_angular_distance(truth, h) for h in hyps.hypotheses)
        assert angles == pytest.approx([0.0, math.pi], abs=1e-9)
        errors = [adds_error(h, truth, model) for h in hyps.hypotheses]
        assert errors[0] == pytest.approx(errors[1], abs=1e-9)

    def test_mirror_pair_on_a_mirror_only_model(self, rng):
        model = clamp_model(3, "clamp", 0.2, 0.08, 0.03)
        reflected = model.points * np.array([1.0, 1.0, -1.0])
        assert sorted(map(tuple, reflected.round(12))) == sorted(map(tuple, model.points.round(12)))

        truth = pa.random_pose(rng)
        (half_turn,) = sim.MirrorPair((0.0, 0.0, 1.0)).transforms()
        partner = pa.compose(truth, half_turn)
        assert adds_error(partner, truth, model) > 0.01
        assert adds_error(partner, truth, box_model(0, "box", (0.16, 0.06, 0.21))) < 1e-9

    def test_discrete_rotations_cycle_before_repeating(self, rng):
        truth = pa.random_pose(rng)
        config = sim.SimConfig(hypothesis_count=5, p_cov=1.0, p_spur=0.0, **EXACT)
        hyps = sim.generate_hypotheses(truth, sim.DiscreteRotations((0.0, 0.0, 1.0), 4), config, rng)
        assert hyps.weights == (0.2,) * 5
        quarter_turns = []
        for h in hyps.hypotheses:
            np.testing.assert_allclose(h.translation, truth.translation, atol=1e-12)
            angle = pa.rotation_angular_distance(truth, h)
            quarter_turns.append(round(angle / (math.pi / 2)))
            assert angle == pytest.approx(quarter_turns[-1] * math.pi / 2, abs=1e-9)
        counts = collections.Counter(quarter_turns)
        # 90 and 270 degree turns have the same geodesic angle
        assert counts[0] == 1 and counts[2] >= 1 and counts[1] >= 2
        assert sum(counts.values()) == 5

    def test_uncovered_without_symmetry_is_spurious(self, rng):
        truth = pa.Pose3.from_translation([0.0, 0.0, 2.0])
        config = sim.SimConfig(hypothesis_count=3, p_cov=0.0, p_spur=0.0, **EXACT)
        hyps = sim.generate_hypotheses(truth, sim.NoSymmetry(), config, rng)
        for h in hyps.hypotheses:
            assert pa.tangent_distance(h, truth) > 1e-6
            assert np.linalg.norm(h.translation) <= 4.0

    def test_reproducible(self):
        truth = pa.Pose3.from_translation([0.0, 0.0, 2.0])
        config = sim.SimConfig()
        symmetry = sim.AxisContinuous((0.0, 0.0, 1.0), 12)
        a = sim.generate_hypotheses(truth, symmetry, config, np.random.default_rng(3))
        b = sim.generate_hypotheses(truth, symmetry, config, np.random.default_rng(3))
        assert [h.matrix().tobytes() for h in a.hypotheses] == [h.matrix().tobytes() for h in b.hypotheses]

    @pytest.mark.parametrize(
        "model, symmetry",
        [
            (box_model(0, "box", (0.16, 0.06, 0.21)), sim.DiscreteRotations((0.0, 0.0, 1.0), 2)),
            (cylinder_model(2, "can", 0.043, 0.033), sim.AxisContinuous((0.0, 0.0, 1.0), 12)),
        ],
    )
    def test_symmetric_copies_have_zero_adds(self, rng, model, symmetry):
        truth = pa.random_pose(rng)
        config = sim.SimConfig(hypothesis_count=5, p_cov=1.0, p_spur=0.0, **EXACT)
        hyps = sim.generate_hypotheses(truth, symmetry, config, rng)
        for h in hyps.hypotheses:
            assert adds_error(h, truth, model) < 1e-9


class TestRunSimulation:
    def test_zero_range(self):
        out = sim.run_simulation(sim.SimConfig(frame_count=30, max_range=0.0))
        assert all(frame == () for frame in out.measurements)
        assert all(v == () for v in out.visibility)
        assert len(out.odometry) == 29

    def test_default_coverage(self):
        out = sim.run_simulation(sim.SimConfig())
        seen = collections.Counter(object_id for frame in out.visibility for object_id in frame)
        for obj in out.objects:
            assert seen[obj.id] >= 0.1 * out.frame_count
        for frame in out.measurements:
            for _, hyps in frame:
                assert len(hyps) == 5
                assert hyps.weights == (0.2,) * 5

    def test_exact_coverage_contains_truth(self):
        config = sim.SimConfig(frame_count=60, p_cov=1.0, **EXACT)
        out = sim.run_simulation(config)
        truth = out.groundtruth()
        count = 0
        for frame, observed in enumerate(out.measurements):
            camera = out.trajectory[frame]
            for object_id, hyps in observed:
                relative = pa.relative_object_pose(camera, truth[out.objects[object_id].key])
                _, error = best_hypothesis(hyps, relative, out.model_for(object_id), Metric.ADD)
                assert error == pytest.approx(0.0, abs=1e-12)
                count += 1
        assert count > 0

    def test_visibility_matches_geometry(self):
        config = sim.SimConfig(frame_count=40)
        out = sim.run_simulation(config)
        for camera, visible in zip(out.trajectory, out.visibility):
            expected = tuple(o.id for o in out.objects if sim.is_visible(camera, o.pose_in_world, config))
            assert visible == expected

    def test_checksum_is_deterministic(self):
        config = sim.SimConfig(seed=4, frame_count=50)
        a, b = sim.run_simulation(config), sim.run_simulation(config)
        assert sim.pack_sim_output(a) == sim.pack_sim_output(b)
        assert sim.sim_checksum(a) == sim.sim_checksum(b)
        assert sim.sim_checksum(a) != sim.sim_checksum(sim.run_simulation(sim.SimConfig(seed=5, frame_count=50)))

    def test_unpack_trajectory(self):
        out = sim.run_simulation(sim.SimConfig(frame_count=12))
        poses = sim.unpack_trajectory(sim.pack_sim_output(out))
        assert [p.matrix().tolist() for p in poses] == [p.matrix().tolist() for p in out.trajectory]

    def test_to_graph(self):
        out = sim.run_simulation(sim.SimConfig(frame_count=40))
        graph, initial = out.to_graph()
        assert len(graph.priors) == 0
        assert len(graph.max_mixture_factors) == sum(len(f) for f in out.measurements)
        assert len(graph) == len(out.odometry) + len(graph.max_mixture_factors)
        assert set(graph.keys()) <= set(initial)
        assert initial[VariableKey.robot(0)] is out.trajectory[0]
