import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mhslam import factor_graph as fg
from mhslam import pose_algebra as pa
from mhslam.errors import InvalidInputError
from mhslam.errors import MissingVariableError
from mhslam.errors import ValidationError

X0 = fg.VariableKey.robot(0)
X1 = fg.VariableKey.robot(1)
L0 = fg.VariableKey.landmark(0)


def _random_information(rng):
    a = rng.standard_normal((6, 6))
    return a @ a.T + np.diag(rng.uniform(1.0, 10.0, size=6))


def _near(rng, pose, scale=0.5):
    xi = rng.uniform(-scale, scale, size=6)
    return pa.compose(pa.exp(xi), pose)


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestVariables:
    def test_key_ordering_and_names(self):
        assert sorted([L0, X1, X0]) == [X0, X1, L0]
        assert str(X1) == "x1"
        assert str(L0) == "l0"
        assert X0.is_robot and not L0.is_robot

    def test_negative_index_rejected(self):
        with pytest.raises(InvalidInputError):
            fg.VariableKey.robot(-1)

    def test_missing_variable(self):
        v = fg.GraphValues({X0: pa.identity()})
        assert X0 in v
        assert X1 not in v
        with pytest.raises(MissingVariableError):
            v[X1]

    def test_retract(self):
        v = fg.GraphValues({X0: pa.identity(), L0: pa.Pose3.from_translation([1.0, 0.0, 0.0])})
        delta = np.zeros(12)
        delta[9] = 2.0
        out = v.retract([X0, L0], delta)
        np.testing.assert_allclose(out[L0].translation, [3.0, 0.0, 0.0])
        assert out[X0].matrix().tolist() == np.eye(4).tolist()
        assert v[L0].translation[0] == 1.0


class TestInformation:
    def test_sqrt_information(self, rng):
        info = _random_information(rng)
        upper = fg.sqrt_information(info)
        np.testing.assert_allclose(upper.T @ upper, info, rtol=1e-12, atol=1e-12)
        assert np.allclose(upper, np.triu(upper))

    @pytest.mark.parametrize(
        "info",
        [
            -np.eye(6),
            np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 0.0]),
            np.eye(6) + np.triu(np.ones((6, 6)), 1),
            np.full((6, 6), np.nan),
        ],
    )
    def test_invalid_information_rejected(self, info):
        with pytest.raises(ValidationError):
            fg.PriorFactor(X0, pa.identity(), info)

    def test_sigma_floor(self):
        info = fg.information_from_sigmas(0.0, 0.5, floor=0.1)
        np.testing.assert_allclose(np.diag(info), [100.0] * 3 + [4.0] * 3)


class TestFactorConstruction:
    def test_odometry_needs_two_robots(self):
        with pytest.raises(InvalidInputError):
            fg.OdometryFactor(X0, L0, pa.identity(), np.eye(6))
        with pytest.raises(InvalidInputError):
            fg.OdometryFactor(X0, X0, pa.identity(), np.eye(6))

    def test_landmark_needs_robot_then_landmark(self):
        with pytest.raises(InvalidInputError):
            fg.LandmarkFactor(L0, X0, pa.identity(), np.eye(6))
        with pytest.raises(InvalidInputError):
            fg.MaxMixtureFactor(X0, X1, (pa.identity(),), np.eye(6))

    def test_mixture_weights(self):
        f = fg.MaxMixtureFactor(X0, L0, (pa.identity(),) * 3, np.eye(6), (2.0, 1.0, 1.0))
        assert f.weights == (0.5, 0.25, 0.25)
        assert f.offsets == pytest.approx((0.0, math.log(2.0), math.log(2.0)))
        with pytest.raises(InvalidInputError):
            fg.MaxMixtureFactor(X0, L0, (), np.eye(6))
        with pytest.raises(InvalidInputError):
            fg.MaxMixtureFactor(X0, L0, (pa.identity(),), np.eye(6), (0.5, 0.5))

    def test_uniform_offsets_are_zero(self):
        f = fg.MaxMixtureFactor(X0, L0, (pa.identity(),) * 5, np.eye(6))
        assert f.offsets == (0.0,) * 5

    def test_graph_keeps_insertion_order(self):
        prior = fg.PriorFactor(X1, pa.identity(), np.eye(6))
        odom = fg.OdometryFactor(X1, X0, pa.identity(), np.eye(6))
        mm = fg.MaxMixtureFactor(X0, L0, (pa.identity(),), np.eye(6))
        graph = fg.FactorGraph([prior, odom, mm])
        assert graph.factors == (prior, odom, mm)
        assert graph.keys() == [X1, X0, L0]
        assert graph.priors == [prior]
        assert graph.max_mixture_factors == [mm]
        with pytest.raises(InvalidInputError):
            graph.add("not a factor")  # type: ignore[arg-type]


class TestResiduals:
    def test_prior_at_value_is_zero(self, rng):
        p = pa.random_pose(rng)
        f = fg.PriorFactor(X0, p, np.eye(6))
        np.testing.assert_allclose(fg.residual_prior(f, fg.GraphValues({X0: p})), 0.0, atol=1e-12)

    def test_prior_residual_is_twist(self, rng):
        xi = rng.uniform(-0.01, 0.01, size=6)
        f = fg.PriorFactor(X0, pa.identity(), np.eye(6))
        v = fg.GraphValues({X0: pa.inverse(pa.exp(xi))})
        np.testing.assert_allclose(fg.residual_prior(f, v), xi, atol=1e-12)

    def test_information_scaling(self, rng):
        p, z = pa.random_pose(rng), pa.random_pose(rng)
        v = fg.GraphValues({X0: p})
        unit = fg.residual_prior(fg.PriorFactor(X0, z, np.eye(6)), v)
        np.testing.assert_allclose(fg.residual_prior(fg.PriorFactor(X0, z, 4.0 * np.eye(6)), v), 2.0 * unit)

    def test_doubling_information_scales_by_sqrt_two(self, rng):
        info = _random_information(rng)
        v = fg.GraphValues({X0: pa.random_pose(rng), L0: pa.random_pose(rng)})
        z = pa.random_pose(rng)
        r1 = fg.residual_landmark(fg.LandmarkFactor(X0, L0, z, info), v)
        r2 = fg.residual_landmark(fg.LandmarkFactor(X0, L0, z, 2.0 * info), v)
        np.testing.assert_allclose(r2, math.sqrt(2.0) * r1, rtol=1e-10, atol=1e-12)

    def test_landmark_camera_at_identity(self, rng):
        z = pa.random_pose(rng)
        f = fg.LandmarkFactor(X0, L0, z, np.eye(6))
        v = fg.GraphValues({X0: pa.identity(), L0: z})
        np.testing.assert_allclose(fg.residual_landmark(f, v), 0.0, atol=1e-12)

    def test_landmark_matches_composition(self, rng):
        camera, landmark, z = pa.random_pose(rng), pa.random_pose(rng), pa.random_pose(rng)
        info = _random_information(rng)
        f = fg.LandmarkFactor(X0, L0, z, info)
        expected = np.linalg.cholesky(info).T @ pa.log(
            pa.compose(z, pa.inverse(pa.compose(pa.inverse(camera), landmark)))
        )
        np.testing.assert_allclose(
            fg.residual_landmark(f, fg.GraphValues({X0: camera, L0: landmark})), expected, atol=1e-9
        )

    def test_odometry_exact_is_zero(self, rng):
        a, b = pa.random_pose(rng), pa.random_pose(rng)
        f = fg.OdometryFactor(X0, X1, pa.between(a, b), np.eye(6))
        np.testing.assert_allclose(fg.residual_odometry(f, fg.GraphValues({X0: a, X1: b})), 0.0, atol=1e-12)

    def test_missing_key(self):
        f = fg.OdometryFactor(X0, X1, pa.identity(), np.eye(6))
        with pytest.raises(MissingVariableError):
            fg.residual_odometry(f, fg.GraphValues({X0: pa.identity()}))

    def test_component_out_of_range(self):
        f = fg.MaxMixtureFactor(X0, L0, (pa.identity(),), np.eye(6))
        v = fg.GraphValues({X0: pa.identity(), L0: pa.identity()})
        with pytest.raises(InvalidInputError):
            fg.residual_component(f, 1, v)


class TestSelection:
    def test_single_component(self, rng):
        f = fg.MaxMixtureFactor(X0, L0, (pa.random_pose(rng),), np.eye(6))
        assert fg.select_component(f, fg.GraphValues({X0: pa.random_pose(rng), L0: pa.random_pose(rng)})) == 0

    def test_zero_residual_component_wins(self, rng):
        camera, landmark = pa.random_pose(rng), pa.random_pose(rng)
        truth = pa.relative_object_pose(camera, landmark)
        others = [pa.random_pose(rng) for _ in range(4)]
        f = fg.MaxMixtureFactor(X0, L0, (others[0], others[1], truth, others[2], others[3]), np.eye(6))
        v = fg.GraphValues({X0: camera, L0: landmark})
        assert fg.select_component(f, v) == 2
        j, r, offset = fg.residual_active(f, v)
        assert j == 2 and offset == 0.0
        np.testing.assert_allclose(r, 0.0, atol=1e-12)

    def test_ties_pick_lowest_index(self, rng):
        z = pa.random_pose(rng)
        f = fg.MaxMixtureFactor(X0, L0, (z, z, z), np.eye(6))
        assert fg.select_component(f, fg.GraphValues({X0: pa.random_pose(rng), L0: pa.random_pose(rng)})) == 0

    def test_heaviest_weight_wins_ties(self, rng):
        z = pa.random_pose(rng)
        v = fg.GraphValues({X0: pa.random_pose(rng), L0: pa.random_pose(rng)})
        f = fg.MaxMixtureFactor(X0, L0, (z, z, z), np.eye(6), (0.25, 0.5, 0.25))
        assert fg.select_component(f, v) == 1

    def test_weight_scaling_invariance(self, rng):
        zs = tuple(pa.random_pose(rng) for _ in range(4))
        weights = tuple(rng.uniform(0.1, 1.0, size=4))
        v = fg.GraphValues({X0: pa.random_pose(rng), L0: pa.random_pose(rng)})
        a = fg.MaxMixtureFactor(X0, L0, zs, np.eye(6), weights)
        b = fg.MaxMixtureFactor(X0, L0, zs, np.eye(6), tuple(7.5 * w for w in weights))
        assert fg.select_component(a, v) == fg.select_component(b, v)

    def test_matches_exhaustive_likelihood(self, rng):
        info = _random_information(rng)
        cov = np.linalg.inv(info)
        for _ in range(50):
            camera, landmark = pa.random_pose(rng), pa.random_pose(rng)
            truth = pa.relative_object_pose(camera, landmark)
            zs = tuple(_near(rng, truth, 0.4) for _ in range(5))
            weights = tuple(rng.uniform(0.1, 1.0, size=5))
            f = fg.MaxMixtureFactor(X0, L0, zs, info, weights)
            v = fg.GraphValues({X0: camera, L0: landmark})
            nll = [
                -math.log(w) - multivariate_normal(np.zeros(6), cov).logpdf(pa.log(pa.compose(z, pa.inverse(truth))))
                for z, w in zip(zs, f.weights)
            ]
            assert fg.select_component(f, v) == int(np.argmin(nll))
            assert fg.negative_log_likelihood(f, v) == pytest.approx(min(nll), rel=1e-9, abs=1e-9)


class TestLinearize:
    def _configurations(self, rng, count=100):
        for _ in range(count):
            a, b = pa.random_pose(rng, 2.0), pa.random_pose(rng, 2.0)
            yield a, b, _near(rng, pa.between(a, b)), _random_information(rng)

    def _check(self, factor, v, component=None):
        lin = fg.linearize(factor, v, component)
        numerical = fg.numerical_jacobians(factor, v, component=component)
        assert len(lin.jacobians) == len(numerical)
        for analytic, numeric in zip(lin.jacobians, numerical):
            assert _relative_error(analytic, numeric) < 1e-5
        np.testing.assert_allclose(lin.residual, fg.whitened_residual(factor, v, component), atol=0.0)

    def test_prior(self, rng):
        for a, _, z, info in self._configurations(rng):
            f = fg.PriorFactor(X0, _near(rng, a), info)
            self._check(f, fg.GraphValues({X0: a}))

    def test_prior_at_value_is_negated_information_root(self, rng):
        p = pa.random_pose(rng)
        info = _random_information(rng)
        lin = fg.linearize(fg.PriorFactor(X0, p, info), fg.GraphValues({X0: p}))
        np.testing.assert_allclose(lin.jacobians[0], -fg.sqrt_information(info), atol=1e-9)

    def test_odometry(self, rng):
        for a, b, z, info in self._configurations(rng):
            f = fg.OdometryFactor(X0, X1, z, info)
            v = fg.GraphValues({X0: a, X1: b})
            self._check(f, v)
            lin = fg.linearize(f, v)
            np.testing.assert_allclose(lin.jacobians[0], -lin.jacobians[1])

    def test_landmark(self, rng):
        for a, b, z, info in self._configurations(rng):
            self._check(fg.LandmarkFactor(X0, L0, z, info), fg.GraphValues({X0: a, L0: b}))

    def test_max_mixture_active_component(self, rng):
        for a, b, z, info in self._configurations(rng):
            zs = (pa.random_pose(rng), z, _near(rng, z, 0.3))
            f = fg.MaxMixtureFactor(X0, L0, zs, info)
            v = fg.GraphValues({X0: a, L0: b})
            self._check(f, v)
            assert fg.linearize(f, v).component == fg.select_component(f, v)

    def test_pinned_component(self, rng):
        a, b, z, info = next(self._configurations(rng, 1))
        f = fg.MaxMixtureFactor(X0, L0, (z, _near(rng, z, 0.3)), info)
        v = fg.GraphValues({X0: a, L0: b})
        lin = fg.linearize(f, v, component=1)
        assert lin.component == 1
        np.testing.assert_allclose(lin.residual, fg.residual_component(f, 1, v))
        self._check(f, v, component=1)

    def test_ground_truth_jacobians_full_rank(self, rng):
        a, b = pa.random_pose(rng), pa.random_pose(rng)
        f = fg.LandmarkFactor(X0, L0, pa.between(a, b), _random_information(rng))
        lin = fg.linearize(f, fg.GraphValues({X0: a, L0: b}))
        np.testing.assert_allclose(lin.residual, 0.0, atol=1e-9)
        assert all(np.linalg.matrix_rank(j) == 6 for j in lin.jacobians)


class TestSingleComponentEquivalence:
    def test_bit_identical_to_landmark_factor(self, rng):
        for _ in range(50):
            a, b, z = pa.random_pose(rng), pa.random_pose(rng), pa.random_pose(rng)
            info = _random_information(rng)
            v = fg.GraphValues({X0: a, L0: b})
            plain = fg.LandmarkFactor(X0, L0, z, info)
            mixture = fg.MaxMixtureFactor(X0, L0, (z,), info)
            lp, lm = fg.linearize(plain, v), fg.linearize(mixture, v)
            assert lp.residual.tobytes() == lm.residual.tobytes()
            for jp, jm in zip(lp.jacobians, lm.jacobians):
                assert jp.tobytes() == jm.tobytes()
            assert lp.error == lm.error
            assert fg.factor_error(plain, v) == fg.factor_error(mixture, v)

    def test_total_error_sums_in_order(self, rng):
        v = fg.GraphValues({X0: pa.random_pose(rng), X1: pa.random_pose(rng), L0: pa.random_pose(rng)})
        factors = [
            fg.PriorFactor(X0, pa.random_pose(rng), np.eye(6)),
            fg.OdometryFactor(X0, X1, pa.random_pose(rng), np.eye(6)),
            fg.MaxMixtureFactor(X1, L0, (pa.random_pose(rng), pa.random_pose(rng)), np.eye(6)),
        ]
        expected = 0.0
        for f in factors:
            expected += fg.factor_error(f, v)
        assert fg.total_error(fg.FactorGraph(factors), v) == expected


def _mixed_graph(rng, robots=4, landmarks=3):
    keys = [fg.VariableKey.robot(i) for i in range(robots)] + [fg.VariableKey.landmark(j) for j in range(landmarks)]
    v = fg.GraphValues({k: pa.random_pose(rng, 3.0) for k in keys})
    factors = [fg.PriorFactor(X0, pa.random_pose(rng, 3.0), _random_information(rng))]
    for i in range(robots - 1):
        a, b = fg.VariableKey.robot(i), fg.VariableKey.robot(i + 1)
        factors.append(fg.OdometryFactor(a, b, _near(rng, pa.between(v[a], v[b])), _random_information(rng)))
    for j in range(landmarks):
        lmk, cam = fg.VariableKey.landmark(j), fg.VariableKey.robot(int(rng.integers(robots)))
        z = pa.relative_object_pose(v[cam], v[lmk])
        n = int(rng.integers(1, 5))
        zs = tuple(_near(rng, z, 0.3 * k) for k in range(n))
        weights = tuple(rng.uniform(0.2, 1.0, size=n))
        factors.append(fg.MaxMixtureFactor(cam, lmk, zs, _random_information(rng), weights))
    factors.append(fg.LandmarkFactor(X1, L0, pa.random_pose(rng), _random_information(rng)))
    return fg.FactorGraph(factors), v


class TestStackedGraph:
    def test_keys_follow_first_appearance(self, rng):
        graph, _ = _mixed_graph(rng)
        stacked = fg.StackedGraph(graph)
        assert stacked.keys() == graph.keys()
        assert len(stacked) == len(graph)
        assert X0 in stacked and fg.VariableKey.landmark(9) not in stacked

    def test_evaluation_matches_per_factor_errors(self, rng):
        for _ in range(20):
            graph, v = _mixed_graph(rng)
            stacked = fg.StackedGraph(graph)
            evaluation = stacked.evaluate(*stacked.stack_values(v))
            expected = [fg.factor_error(f, v) for f in graph]
            np.testing.assert_allclose(evaluation.costs, expected, rtol=1e-9, atol=1e-9)
            assert evaluation.error == pytest.approx(fg.total_error(graph, v), rel=1e-9)
            assert evaluation.active == tuple(fg.select_component(f, v) for f in graph.max_mixture_factors)

    def test_ties_go_to_lowest_component(self, rng):
        z = pa.random_pose(rng)
        graph = fg.FactorGraph([fg.MaxMixtureFactor(X0, L0, (z, z, z), np.eye(6))])
        stacked = fg.StackedGraph(graph)
        evaluation = stacked.evaluate(*stacked.stack_values({X0: pa.random_pose(rng), L0: pa.random_pose(rng)}))
        assert evaluation.active == (0,)

    def test_normal_equations_match_per_factor_linearization(self, rng):
        for _ in range(10):
            graph, v = _mixed_graph(rng)
            stacked = fg.StackedGraph(graph)
            rot, trans = stacked.stack_values(v)
            hessian, g = stacked.normal_equations(rot, trans, stacked.evaluate(rot, trans))

            index = {k: i for i, k in enumerate(stacked.keys())}
            dense = np.zeros((6 * len(index), 6 * len(index)))
            expected_g = np.zeros(6 * len(index))
            for factor in graph:
                lin = fg.linearize(factor, v)
                for key_a, jac_a in zip(lin.keys, lin.jacobians):
                    a = 6 * index[key_a]
                    expected_g[a : a + 6] += jac_a.T @ lin.residual
                    for key_b, jac_b in zip(lin.keys, lin.jacobians):
                        b = 6 * index[key_b]
                        dense[a : a + 6, b : b + 6] += jac_a.T @ jac_b
            scale = np.max(np.abs(dense))
            np.testing.assert_allclose(hessian.toarray(), dense, atol=1e-9 * scale)
            np.testing.assert_allclose(g, expected_g, atol=1e-9 * max(1.0, np.max(np.abs(expected_g))))

    def test_retract_matches_graph_values(self, rng):
        graph, v = _mixed_graph(rng)
        stacked = fg.StackedGraph(graph)
        keys = stacked.keys()
        delta = rng.normal(0.0, 0.3, size=6 * len(keys))
        rot, trans = fg.retract_stacked(*stacked.stack_values(v), delta)
        expected = v.retract(keys, delta)
        for key, pose in zip(keys, pa.unstack_poses(rot, trans)):
            np.testing.assert_allclose(pose.matrix(), expected[key].matrix(), atol=1e-12)

    def test_extend_keeps_earlier_rows(self, rng):
        graph, v = _mixed_graph(rng)
        whole = fg.StackedGraph(graph)
        grown = fg.StackedGraph(graph.factors[:3])
        grown.extend(graph.factors[3:])
        a = whole.evaluate(*whole.stack_values(v))
        b = grown.evaluate(*grown.stack_values(v))
        assert a.costs.tobytes() == b.costs.tobytes()
        assert a.active == b.active

    def test_missing_value(self, rng):
        graph, v = _mixed_graph(rng)
        stacked = fg.StackedGraph(graph)
        with pytest.raises(MissingVariableError):
            stacked.stack_values({X0: v[X0]})

    def test_unanchored(self):
        stacked = fg.StackedGraph(
            [fg.PriorFactor(X0, pa.identity(), np.eye(6)), fg.MaxMixtureFactor(X1, L0, (pa.identity(),), np.eye(6))]
        )
        assert stacked.unanchored() == X1
        stacked.extend([fg.OdometryFactor(X0, X1, pa.identity(), np.eye(6))])
        assert stacked.unanchored() is None
