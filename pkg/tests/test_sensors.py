"""Sensor model, bias trajectories, point clouds, projection."""

import numpy as np
import pytest

from vinsim.geometry import Pose, exp_rot
from vinsim.sensors import (
    GRAVITY_DEFAULT, BiasTrajectory, FeatureGroup, ImuSample, Scene,
    bias_bound_report, make_bias_trajectory, make_group_from_points,
    measure_accel, measure_gyro, project_features, simulate_imu,
    simulate_vision, spawn_point_cloud,
)
from vinsim.trajectory import Kinematics, make_circular_trajectory


def _kin(R=np.eye(3), alpha=np.zeros(3), omega=np.zeros(3)):
    z = np.zeros(3)
    return Kinematics(0.0, R, z, z, np.asarray(alpha, dtype=float),
                      np.asarray(omega, dtype=float), z, z, z)


class TestImuModel:
    def test_ideal_gyro(self):
        out = measure_gyro(_kin(omega=[0, 0, 1]), np.zeros(3))
        assert np.allclose(out, [0, 0, 1])

    def test_gyro_bias_passthrough(self):
        b = np.array([1e-3, -2e-3, 5e-4])
        assert np.allclose(measure_gyro(_kin(), b), b)

    def test_gyro_noise_mean(self):
        rng = np.random.default_rng(0)
        kin = _kin(omega=[0.2, 0.0, -0.1])
        b = np.array([1e-3, 0.0, 0.0])
        n = 100000
        draws = np.array([measure_gyro(kin, b, 0.01, rng) for _ in range(n)])
        tol = 3 * 0.01 / np.sqrt(n)
        assert np.abs(draws.mean(axis=0) - (kin.omega + b)).max() < tol

    def test_accel_stationary_reads_minus_gravity(self):
        g = np.array([0.0, 0.0, 9.8])
        out = measure_accel(_kin(), np.zeros(3), gamma=g)
        assert np.allclose(out, [0, 0, -9.8])

    def test_accel_free_fall_reads_bias(self):
        b = np.array([0.01, -0.02, 0.03])
        out = measure_accel(_kin(alpha=GRAVITY_DEFAULT), b, gamma=GRAVITY_DEFAULT)
        assert np.allclose(out, b)

    def test_accel_rotation_about_gravity(self):
        r = exp_rot(np.array([0.0, 0.0, np.pi]))
        out = measure_accel(_kin(R=r), np.zeros(3), gamma=GRAVITY_DEFAULT)
        assert np.allclose(out, -GRAVITY_DEFAULT, atol=1e-12)

    def test_imu_sample_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ImuSample(0.0, np.array([np.nan, 0, 0]), np.zeros(3))

    def test_simulate_imu_matches_pointwise(self):
        traj = make_circular_trajectory(2.0, 0.5, seed=4, duration=4.0)
        ts = np.linspace(0, 4, 41)
        batch = traj.sample_batch(ts)
        bias = make_bias_trajectory("constant", seed=1)
        stream = simulate_imu(batch, bias, GRAVITY_DEFAULT)
        for i in (0, 17, 40):
            k = batch.at(i)
            assert np.allclose(stream.omega_imu[i],
                               measure_gyro(k, bias.omega(ts[i])[0]))
            assert np.allclose(stream.alpha_imu[i],
                               measure_accel(k, bias.alpha(ts[i])[0], GRAVITY_DEFAULT))


class TestBiasTrajectories:
    def test_zero_drift_sinusoid_is_constant(self):
        b = make_bias_trajectory("sinusoidal-bounded", epsilon=0.0, seed=3)
        ts = np.linspace(0, 20, 101)
        w = b.omega(ts)
        assert np.ptp(w, axis=0).max() == 0.0

    def test_grid_max_oracle(self):
        # epsilon 1e-4, amplitude 1e-3: derivative norms within bound on grid
        b = make_bias_trajectory("sinusoidal-bounded", epsilon=1e-4,
                                 amplitude_budget=(1e-3, 1e-3), seed=5,
                                 duration=30.0)
        rep = bias_bound_report(b, duration=30.0, grid_dt=1e-3)
        assert rep["max_omega_rate"] <= 1e-4 + 1e-9
        assert rep["max_alpha_rate"] <= 1e-4 + 1e-9
        assert rep["max_omega_accel"] <= 1e-4 + 1e-9

    def test_bound_invariant_many_instances(self):
        for seed in range(10):
            eps = 10.0 ** np.random.default_rng(seed).uniform(-5, -2)
            b = make_bias_trajectory("sinusoidal-bounded", epsilon=eps,
                                     amplitude_budget=(2e-3, 2e-2), seed=seed,
                                     duration=20.0)
            rep = bias_bound_report(b, duration=20.0)
            assert rep["max_omega_rate"] <= eps + 1e-9
            assert rep["max_alpha_rate"] <= eps + 1e-9
            assert rep["max_omega_accel"] <= eps + 1e-9
            assert b.within_bounds

    def test_determinism(self):
        a = make_bias_trajectory("sinusoidal-bounded", epsilon=1e-3, seed=11)
        b = make_bias_trajectory("sinusoidal-bounded", epsilon=1e-3, seed=11)
        ts = np.linspace(0, 10, 50)
        assert np.array_equal(a.omega(ts), b.omega(ts))
        assert np.array_equal(a.alpha(ts), b.alpha(ts))

    def test_random_walk_flagged(self):
        b = make_bias_trajectory("random-walk", epsilon=1e-4, seed=2, duration=5.0)
        assert not b.within_bounds
        ts = np.linspace(0, 5, 100)
        assert b.omega(ts).shape == (100, 3)

    def test_unsatisfiable_budget_rejected(self):
        with pytest.raises(ValueError):
            make_bias_trajectory("sinusoidal-bounded", epsilon=1e-6,
                                 amplitude_budget=(1.0, 1.0), min_freq_hz=1.0)

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError):
            make_bias_trajectory("constant", epsilon=-1.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_bias_trajectory("brownian")

    def test_constant_kind_values(self):
        wb = np.array([1e-3, 2e-3, -1e-3])
        ab = np.array([0.01, -0.02, 0.005])
        b = make_bias_trajectory("constant", constant_values=(wb, ab))
        ts = np.array([0.0, 5.0])
        assert np.allclose(b.omega(ts), wb)
        assert np.allclose(b.alpha(ts), ab)
        assert np.allclose(b.omega_rate(ts), 0.0)


class TestPointCloud:
    def test_determinism(self):
        box = (np.array([-1, -1, -3]), np.array([1, 1, -1]))
        a = spawn_point_cloud(12, box, seed=9)
        b = spawn_point_cloud(12, box, seed=9)
        assert np.array_equal(a, b)

    def test_noncoplanar(self):
        box = (np.zeros(3), np.ones(3))
        for seed in range(10):
            pts = spawn_point_cloud(4, box, seed=seed)
            sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
            assert sv[2] > 1e-6

    def test_gauge_fixing_triple_check(self):
        box = (np.array([0.5, 0.5, 0.5]), np.array([1.5, 1.5, 1.5]))
        pts = spawn_point_cloud(3, box, seed=0,
                                require_noncoplanar_with_origin=True)
        assert np.linalg.svd(pts, compute_uv=False)[2] > 1e-6

    def test_degenerate_region_rejected(self):
        with pytest.raises(ValueError):
            spawn_point_cloud(4, (np.zeros(3), np.array([1.0, 0.0, 1.0])))

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            spawn_point_cloud(2, (np.zeros(3), np.ones(3)))


class TestProjection:
    def _group_from(self, points, body=Pose.identity(), g_cb=Pose.identity()):
        return make_group_from_points(0, 0.0, body, g_cb, np.asarray(points, dtype=float))

    def test_optical_axis(self):
        g = self._group_from([[0.0, 0.0, 5.0], [1.0, 1.0, 1.0], [0.4, -0.2, 2.0]])
        pix, vis, ids = project_features(Pose.identity(), Pose.identity(), [g])
        assert np.allclose(pix[0], [0.0, 0.0])
        assert np.allclose(pix[1], [1.0, 1.0])
        assert vis.all()

    def test_reprojection_at_birth_exact(self):
        traj = make_circular_trajectory(2.0, 0.5, seed=6, duration=6.0)
        g_cb = Pose(exp_rot(np.array([0.02, -0.01, 0.03])), np.array([0.05, 0.0, -0.02]))
        body = traj.pose(1.5)
        box = (np.array([-1.5, -1.5, -3.5]), np.array([1.5, 1.5, -1.5]))
        pts = spawn_point_cloud(8, box, seed=3)
        grp = make_group_from_points(0, 1.5, body, g_cb, pts)
        pix, vis, _ = project_features(body, g_cb, [grp])
        assert vis.all()
        assert np.abs(pix - grp.bearings[:, :2]).max() < 1e-12

    def test_behind_camera_flagged(self):
        g = self._group_from([[0.0, 0.0, 5.0], [0.1, 0.1, 1.0]])
        # walk the camera forward past the nearer feature
        body = Pose(np.eye(3), np.array([0.0, 0.0, 2.0]))
        pix, vis, _ = project_features(body, Pose.identity(), [g])
        assert vis[0] and not vis[1]

    def test_group_rejects_points_behind_camera(self):
        with pytest.raises(ValueError):
            self._group_from([[0.0, 0.0, 5.0], [0.0, 0.0, -1.0]])

    def test_depth_positive_invariant(self):
        with pytest.raises(ValueError):
            FeatureGroup(0, 0.0, Pose.identity(),
                         np.array([[0.0, 0.0, 1.0]]), np.array([-1.0]),
                         np.array([0]))

    def test_noise_determinism(self):
        g = self._group_from([[0.0, 0.0, 5.0], [1.0, 1.0, 4.0]])
        p1, _, _ = project_features(Pose.identity(), Pose.identity(), [g],
                                    noise_std=1e-3, rng=np.random.default_rng(7))
        p2, _, _ = project_features(Pose.identity(), Pose.identity(), [g],
                                    noise_std=1e-3, rng=np.random.default_rng(7))
        assert np.array_equal(p1, p2)


class TestSceneAndVision:
    def _scene(self, seed=0, wobble=None):
        from vinsim.trajectory import WobbleSpec
        traj = make_circular_trajectory(
            3.0, 0.5, wobble if wobble is not None else WobbleSpec(),
            seed=seed, duration=10.0)
        box = (np.array([-1.5, -1.5, -3.5]), np.array([1.5, 1.5, -1.5]))
        pts = spawn_point_cloud(12, box, seed=seed + 1)
        g_cb = Pose(exp_rot(np.array([0.01, 0.02, -0.01])), np.array([0.1, -0.05, 0.02]))
        grp = make_group_from_points(0, 0.0, traj.pose(0.0), g_cb, pts)
        return Scene(trajectory=traj, groups=(grp,), g_cb=g_cb)

    def test_gravity_norm_invariant(self):
        with pytest.raises(ValueError):
            Scene(trajectory=make_circular_trajectory(2.0, 0.5, seed=0),
                  groups=(), g_cb=Pose.identity(),
                  gamma=np.array([0.0, 0.0, -3.7]))
        s = Scene(trajectory=make_circular_trajectory(2.0, 0.5, seed=0),
                  groups=(), g_cb=Pose.identity(),
                  gamma=np.array([0.0, 0.0, -3.7]), allow_gravity_override=True)
        assert np.allclose(s.gamma, [0, 0, -3.7])

    def test_vision_stream_consistency(self):
        scene = self._scene(seed=2)
        cam_ts = np.arange(0.0, 10.0, 0.05)
        vs = simulate_vision(scene, cam_ts)
        assert vs.pixels.shape == (len(cam_ts), 12, 2)
        # spot-check one frame against the pointwise projector
        k = 37
        body = scene.trajectory.pose(cam_ts[k])
        pix, vis, _ = project_features(body, scene.g_cb, scene.groups)
        assert np.abs(vs.pixels[k] - pix).max() < 1e-12
        assert np.array_equal(vs.visible[k], vis)

    def test_features_mostly_visible_on_orbit(self):
        scene = self._scene(seed=5)
        vs = simulate_vision(scene, np.arange(0.0, 10.0, 0.05))
        assert vs.visible.mean() > 0.9
