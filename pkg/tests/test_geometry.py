import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vinsim.geometry import (
    Pose,
    ScaledPose,
    act,
    compose,
    exp_rot,
    hat,
    invert,
    is_rotation,
    log_rot,
    poses_close,
    project_to_rotation,
    quat_from_matrix,
    quat_from_rotvec,
    quat_multiply,
    quat_to_matrix,
    rotation_angle,
    scale_pose,
    spectral_norm,
    vee,
)


def random_pose(rng) -> Pose:
    return Pose(exp_rot(rng.uniform(-2.0, 2.0, 3)), rng.uniform(-5.0, 5.0, 3))


class TestHat:
    def test_zero(self):
        assert np.array_equal(hat([0, 0, 0]), np.zeros((3, 3)))

    def test_e3_cross_e1(self):
        np.testing.assert_allclose(hat([0, 0, 1]) @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_definition(self):
        expected = np.array([[0, -3, 2], [3, 0, -1], [-2, 1, 0]], dtype=float)
        assert np.array_equal(hat([1, 2, 3]), expected)

    def test_matches_cross_product(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v, x = rng.normal(size=3), rng.normal(size=3)
            np.testing.assert_allclose(hat(v) @ x, np.cross(v, x), atol=1e-14)
            assert np.array_equal(hat(v).T, -hat(v))

    def test_linear(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(hat(2.5 * a - b), 2.5 * hat(a) - hat(b), atol=1e-14)

    def test_vee_roundtrip(self):
        v = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(vee(hat(v)), v, atol=1e-15)


class TestExpLog:
    def test_zero(self):
        assert np.array_equal(exp_rot([0, 0, 0]), np.eye(3))

    def test_quarter_turn_z(self):
        np.testing.assert_allclose(
            exp_rot([0, 0, np.pi / 2]) @ [1, 0, 0], [0, 1, 0], atol=1e-15
        )

    def test_rotation_invariants(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            r = exp_rot(rng.uniform(-3, 3, 3))
            assert is_rotation(r, tol=1e-12)

    def test_angle_equals_norm(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = rng.normal(size=3)
            v *= rng.uniform(0.0, 3.0) / max(np.linalg.norm(v), 1e-12)
            assert rotation_angle(exp_rot(v)) == pytest.approx(np.linalg.norm(v), abs=1e-9)

    def test_log_roundtrip_1000(self):
        # Round-trip oracle: log(exp(v)) = v for |v| < 3, max error < 1e-9.
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(1000):
            v = rng.normal(size=3)
            v *= rng.uniform(0.0, 2.999) / max(np.linalg.norm(v), 1e-12)
            worst = max(worst, np.linalg.norm(log_rot(exp_rot(v)) - v))
        assert worst < 1e-9

    def test_log_tiny_angles(self):
        for mag in [0.0, 1e-10, 1e-8, 1e-6]:
            v = np.array([mag, 0.0, 0.0])
            np.testing.assert_allclose(log_rot(exp_rot(v)), v, atol=1e-12)

    def test_log_rejects_near_pi(self):
        with pytest.raises(ValueError):
            log_rot(exp_rot([np.pi - 1e-9, 0, 0]))


class TestPoseOps:
    def test_compose_identity(self):
        rng = np.random.default_rng(5)
        g = random_pose(rng)
        assert poses_close(compose(Pose.identity(), g), g)
        assert poses_close(compose(g, Pose.identity()), g)

    def test_translation_action(self):
        g = Pose(np.eye(3), [1.0, -2.0, 3.0])
        np.testing.assert_allclose(act(g, [0.5, 0.5, 0.5]), [1.5, -1.5, 3.5])

    def test_compose_matches_homogeneous_product_1000(self):
        # 4x4 matrix oracle: group ops equal homogeneous matrix algebra.
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(1000):
            g1, g2 = random_pose(rng), random_pose(rng)
            m = compose(g1, g2).matrix()
            worst = max(worst, np.abs(m - g1.matrix() @ g2.matrix()).max())
        assert worst < 1e-12

    def test_invert(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            g = random_pose(rng)
            assert poses_close(compose(g, invert(g)), Pose.identity(), tol=1e-12)
            np.testing.assert_allclose(
                invert(g).matrix(), np.linalg.inv(g.matrix()), atol=1e-12
            )

    def test_act_composes(self):
        rng = np.random.default_rng(8)
        g1, g2, x = random_pose(rng), random_pose(rng), rng.normal(size=3)
        np.testing.assert_allclose(
            act(compose(g1, g2), x), act(g1, act(g2, x)), atol=1e-12
        )

    def test_act_batch(self):
        rng = np.random.default_rng(9)
        g = random_pose(rng)
        pts = rng.normal(size=(11, 3))
        np.testing.assert_allclose(
            act(g, pts), np.stack([act(g, p) for p in pts]), atol=1e-13
        )

    def test_act_preserves_distance(self):
        rng = np.random.default_rng(10)
        g = random_pose(rng)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.linalg.norm(act(g, a) - act(g, b)) == pytest.approx(
            np.linalg.norm(a - b), abs=1e-12
        )


class TestScaledPose:
    def test_scale_one_is_identity(self):
        rng = np.random.default_rng(11)
        g = random_pose(rng)
        assert poses_close(scale_pose(g, 1.0), g)

    def test_scale_two_doubles_translation(self):
        r = exp_rot([0.1, 0.2, 0.3])
        g = scale_pose(Pose(r, [1.0, 2.0, 3.0]), 2.0)
        np.testing.assert_allclose(g.translation, [2.0, 4.0, 6.0])
        assert np.array_equal(g.rotation, r)

    def test_rejects_nonpositive(self):
        g = Pose.identity()
        for bad in [0.0, -1.0]:
            with pytest.raises(ValueError):
                scale_pose(g, bad)
        with pytest.raises(ValueError):
            ScaledPose(g, 0.0)

    def test_scaled_triple_product_matches_matrix_oracle_500(self):
        # sigma(gB g gA) via pointwise ops == 4x4 product with translations
        # scaled afterwards.
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(500):
            ga, g, gb = (random_pose(rng) for _ in range(3))
            sigma = rng.uniform(0.2, 3.0)
            composed = scale_pose(compose(gb, compose(g, ga)), sigma)
            m = gb.matrix() @ g.matrix() @ ga.matrix()
            m[:3, 3] *= sigma
            worst = max(worst, np.abs(composed.matrix() - m).max())
        assert worst < 1e-12

    def test_scaled_motion_algebra(self):
        # Composition/action identities the gauge construction relies on:
        # sigma(g1) o sigma(g2) = sigma(g1 g2) and sigma(h) . (sigma x) = sigma (h x).
        rng = np.random.default_rng(13)
        g1, g2 = random_pose(rng), random_pose(rng)
        sigma = 1.7
        lhs = compose(scale_pose(g1, sigma), Pose(g2.rotation, sigma * g2.translation))
        rhs = scale_pose(compose(g1, g2), sigma)
        assert poses_close(lhs, rhs, tol=1e-12)
        x = rng.normal(size=3)
        np.testing.assert_allclose(
            act(scale_pose(g1, sigma), sigma * x), sigma * act(g1, x), atol=1e-12
        )


class TestLemmaOne:
    """For S in SO(3) with Sdot = S hat(m): aS + Sdot has smallest singular
    value >= |a|, and rank in {0, 2} when a = 0."""

    def test_nonzero_a_1000(self):
        rng = np.random.default_rng(14)
        for _ in range(1000):
            s = exp_rot(rng.uniform(-3, 3, 3))
            m = hat(rng.normal(size=3) * rng.uniform(0, 5))
            a = rng.normal() * rng.uniform(0.1, 3)
            if a == 0.0:
                a = 0.5
            sv = np.linalg.svd(a * s + s @ m, compute_uv=False)
            assert sv.min() >= abs(a) - 1e-12

    def test_zero_a_rank(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            s = exp_rot(rng.uniform(-3, 3, 3))
            m = hat(rng.normal(size=3) * rng.uniform(0.1, 5))
            sv = np.linalg.svd(s @ m, compute_uv=False)
            assert int((sv > 1e-9).sum()) == 2
        sv = np.linalg.svd(exp_rot([1.0, 0, 0]) @ hat([0.0, 0, 0]), compute_uv=False)
        assert int((sv > 1e-9).sum()) == 0


class TestNumericHygiene:
    def test_project_to_rotation(self):
        rng = np.random.default_rng(16)
        r = exp_rot(rng.uniform(-2, 2, 3))
        drifted = r + 1e-6 * rng.normal(size=(3, 3))
        fixed = project_to_rotation(drifted)
        assert is_rotation(fixed, tol=1e-12)
        assert spectral_norm(fixed - r) < 1e-5

    def test_spectral_norm_is_largest_singular_value(self):
        rng = np.random.default_rng(17)
        m = rng.normal(size=(3, 3))
        assert spectral_norm(m) == pytest.approx(
            np.linalg.svd(m, compute_uv=False).max(), abs=1e-14
        )

    def test_quaternion_roundtrip(self):
        rng = np.random.default_rng(18)
        for _ in range(100):
            v = rng.uniform(-3, 3, 3)
            r = exp_rot(v)
            np.testing.assert_allclose(quat_to_matrix(quat_from_matrix(r)), r, atol=1e-12)
            np.testing.assert_allclose(quat_to_matrix(quat_from_rotvec(v)), r, atol=1e-12)

    def test_quaternion_product_matches_matrix_product(self):
        rng = np.random.default_rng(19)
        q1, q2 = quat_from_rotvec(rng.uniform(-2, 2, 3)), quat_from_rotvec(rng.uniform(-2, 2, 3))
        np.testing.assert_allclose(
            quat_to_matrix(quat_multiply(q1, q2)),
            quat_to_matrix(q1) @ quat_to_matrix(q2),
            atol=1e-12,
        )


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2.5, 2.5), min_size=3, max_size=3))
def test_exp_log_property(v):
    v = np.asarray(v)
    if np.linalg.norm(v) >= np.pi - 1e-3:
        v = v * (np.pi - 1e-3) / np.linalg.norm(v) * 0.99
    np.testing.assert_allclose(log_rot(exp_rot(v)), v, atol=1e-9)
