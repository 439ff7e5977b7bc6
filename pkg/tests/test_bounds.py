"""Constraint constants, quiet-interval detection, and the four bounds."""

import itertools

import numpy as np
import pytest

from vinsim.bounds import (
    BoundsConfig, Interval, excitation_constants, find_calibration_intervals,
    gauge_within_bounds, indistinguishable_set_bounds,
    measured_signal_derivatives,
)
from vinsim.experiments import make_bounds_probe_scene
from vinsim.gauge import GaugeTransform, induced_biases
from vinsim.geometry import Pose, exp_rot
from vinsim.sensors import (
    GRAVITY_DEFAULT, Scene, make_bias_trajectory, simulate_imu,
)
from vinsim.trajectory import (
    AccelProgram, AnalyticTrajectory, BlockSum, Signal3, SinusoidAxis,
    Window, WindowedBlock, make_circular_trajectory,
)


@pytest.fixture(scope="module")
def probe_scene():
    return make_bounds_probe_scene()


@pytest.fixture(scope="module")
def probe_bias():
    return make_bias_trajectory(
        "constant",
        constant_values=(np.array([2e-4, -1e-4, 3e-4]),
                         np.array([3e-3, -2e-3, 4e-3])))


@pytest.fixture(scope="module")
def probe_reports(probe_scene, probe_bias):
    out = {}
    for eps in (1e-5, 1e-4, 3e-4, 1e-3):
        cfg = BoundsConfig(epsilon=eps, translation_budget=1e-4,
                           scale_min=0.999, scale_max=1.001)
        out[eps] = indistinguishable_set_bounds(probe_scene, probe_bias, cfg)
    return out


class TestBoundsConfig:
    def test_invalid_configs_rejected(self):
        with pytest.raises(ValueError):
            BoundsConfig(epsilon=-1e-6)
        with pytest.raises(ValueError):
            BoundsConfig(epsilon=0.0, translation_budget=-0.1)
        with pytest.raises(ValueError):
            BoundsConfig(epsilon=0.0, scale_min=0.0)
        with pytest.raises(ValueError):
            BoundsConfig(epsilon=0.0, scale_min=1.2, scale_max=1.1)


class TestExcitationConstants:
    def test_reference_values(self):
        k1, k2, k3 = excitation_constants(
            BoundsConfig(epsilon=0.0, translation_budget=0.0,
                         scale_min=1.0, scale_max=1.0, gravity_norm=9.8))
        assert k1 == pytest.approx(32.4, abs=1e-12)
        assert k2 == pytest.approx(38.4, abs=1e-12)
        assert k3 == 5.0

    def test_zero_gravity_values(self):
        k1, k2, k3 = excitation_constants(
            BoundsConfig(epsilon=0.0, gravity_norm=0.0))
        assert (k1, k2, k3) == (3.0, 9.0, 5.0)

    def test_monotone_in_budgets(self):
        grid = [0.5, 1.0, 2.0]
        for ms, ma, g in itertools.product(grid, repeat=3):
            base = BoundsConfig(epsilon=0.0, translation_budget=ma,
                                scale_min=0.1, scale_max=ms, gravity_norm=g)
            k1, k2, _ = excitation_constants(base)
            for field, value in (("scale_max", ms), ("translation_budget", ma),
                                 ("gravity_norm", g)):
                kw = dict(epsilon=0.0, translation_budget=ma, scale_min=0.1,
                          scale_max=ms, gravity_norm=g)
                kw[field] = value * 1.5
                j1, j2, _ = excitation_constants(BoundsConfig(**kw))
                assert j1 >= k1 and j2 >= k2


def _quiet_then_busy_trajectory():
    # rotation off and exact free fall for the first 2.5 s, then aggressive
    # on both channels
    rate = BlockSum([WindowedBlock(
        Signal3(SinusoidAxis(amps=0.6, freqs=3.0, phases=0.2),
                SinusoidAxis(amps=0.5, freqs=4.2, phases=1.1),
                SinusoidAxis(amps=0.7, freqs=5.5, phases=2.0)),
        Window(t_on=2.5, tau=0.5))])
    accel = AccelProgram([
        WindowedBlock(Signal3.constant(GRAVITY_DEFAULT), Window()),
        WindowedBlock(Signal3.constant([1.5, 0.0, 0.5]),
                      Window(t_on=2.5, tau=0.5)),
    ], duration=8.0)
    return AnalyticTrajectory(rate, np.eye(3), accel, 8.0, cache_dt=1e-3)


class TestCalibrationIntervals:
    def test_quiet_prefix_contained_in_all_three(self):
        traj = _quiet_then_busy_trajectory()
        iv = find_calibration_intervals(traj, 1e-6)
        for name in ("rotation_quiet", "freefall_rotation_quiet",
                     "freefall_steady_spin"):
            got = getattr(iv, name)
            assert got is not None
            assert got.t_start <= 0.0 + 1e-9
            assert got.t_end >= 2.0

    def test_no_quiescence_all_absent(self):
        traj = make_circular_trajectory(3.0, 0.5, seed=3, duration=10.0)
        iv = find_calibration_intervals(traj, 1e-6, grid_dt=5e-3)
        assert iv.rotation_quiet is None
        assert iv.freefall_rotation_quiet is None
        assert iv.freefall_steady_spin is None

    def test_grid_oracle(self):
        # recompute conditions sample by sample with plain numpy and extract
        # runs with groupby
        traj = _quiet_then_busy_trajectory()
        eps = 1e-4
        dt = 2e-3
        ts = np.linspace(0.0, traj.duration, int(round(traj.duration / dt)) + 1)
        batch = traj.sample_batch(ts)
        gamma = np.asarray(GRAVITY_DEFAULT)

        def hat(v):
            return np.array([[0.0, -v[2], v[1]],
                             [v[2], 0.0, -v[0]],
                             [-v[1], v[0], 0.0]])

        masks = {"i1": [], "i2": [], "i3": []}
        for i in range(len(ts)):
            w, wd, wdd = batch.omega[i], batch.omega_dot[i], batch.omega_ddot[i]
            h1 = hat(w)
            rate = np.linalg.norm(w)
            acc = np.linalg.svd(h1 @ h1 + hat(wd), compute_uv=False)[0]
            jerk = np.linalg.svd(
                h1 @ h1 @ h1 + 2.0 * h1 @ hat(wd) + hat(wd) @ h1 + hat(wdd),
                compute_uv=False)[0]
            dev = np.linalg.norm(batch.alpha[i] - gamma)
            masks["i1"].append(rate <= eps and acc <= eps and jerk <= eps)
            masks["i2"].append(rate <= eps and acc <= eps and dev <= eps)
            masks["i3"].append(acc <= eps and jerk <= eps and dev <= eps)

        def longest(mask):
            best = None
            pos = 0
            for val, grp in itertools.groupby(mask):
                n = len(list(grp))
                if val and n >= 2:
                    cand = (ts[pos], ts[pos + n - 1])
                    if best is None or cand[1] - cand[0] > best[1] - best[0]:
                        best = cand
                pos += n
            return best

        iv = find_calibration_intervals(traj, eps, grid_dt=dt)
        for name, key in (("rotation_quiet", "i1"),
                          ("freefall_rotation_quiet", "i2"),
                          ("freefall_steady_spin", "i3")):
            expect = longest(masks[key])
            got = getattr(iv, name)
            assert got is not None and expect is not None
            assert got.t_start == pytest.approx(expect[0], abs=1e-12)
            assert got.t_end == pytest.approx(expect[1], abs=1e-12)

    def test_probe_layout(self, probe_scene):
        iv = find_calibration_intervals(probe_scene.trajectory, 1e-4)
        assert 9.9 < iv.rotation_quiet.t_start < 10.1
        assert 16.4 < iv.rotation_quiet.t_end < 17.2
        assert 18.8 < iv.freefall_rotation_quiet.t_start < 19.1
        assert 25.7 < iv.freefall_rotation_quiet.t_end < 26.0
        assert 29.0 < iv.freefall_steady_spin.t_start < 29.6
        assert iv.freefall_steady_spin.t_end == pytest.approx(250.0)

    def test_interval_type_rejects_empty(self):
        with pytest.raises(ValueError):
            Interval(1.0, 1.0)


class TestMeasuredSignalDerivatives:
    def test_finite_difference_oracle(self):
        traj = make_circular_trajectory(2.5, 0.6, seed=5, duration=12.0)
        bias = make_bias_trajectory("sinusoidal-bounded", epsilon=1e-3, seed=6)
        gamma = np.asarray(GRAVITY_DEFAULT)
        ts = np.linspace(1.0, 11.0, 23)
        sig = measured_signal_derivatives(traj.sample_batch(ts), bias, gamma)

        h = 1e-5
        lo = simulate_imu(traj.sample_batch(ts - h), bias, gamma)
        hi = simulate_imu(traj.sample_batch(ts + h), bias, gamma)
        gyro_rate_fd = (hi.omega_imu - lo.omega_imu) / (2.0 * h)
        accel_rate_fd = (hi.alpha_imu - lo.alpha_imu) / (2.0 * h)
        mid = simulate_imu(traj.sample_batch(ts), bias, gamma)
        gyro_accel_fd = (hi.omega_imu - 2.0 * mid.omega_imu + lo.omega_imu) / h**2

        assert np.abs(sig["gyro_rate"] - gyro_rate_fd).max() < 1e-5
        assert np.abs(sig["accel_rate"] - accel_rate_fd).max() < 1e-4
        assert np.abs(sig["gyro_accel"] - gyro_accel_fd).max() < 1e-3
        assert np.abs(sig["net_rate"]
                      - (mid.omega_imu - bias.omega(ts))).max() < 1e-12


class TestIndistinguishableSetBounds:
    def test_zero_epsilon_collapses_all_bounds(self, probe_scene, probe_bias):
        cfg = BoundsConfig(epsilon=0.0)
        rep = indistinguishable_set_bounds(probe_scene, probe_bias, cfg)
        assert rep.rhs_rotation == 0.0
        assert rep.rhs_scale == 0.0
        assert rep.rhs_translation == 0.0
        assert rep.rhs_gravity == 0.0

    def test_linear_scaling_in_epsilon(self, probe_reports):
        for lo, hi in ((1e-5, 1e-4), (1e-4, 1e-3)):
            a, b = probe_reports[lo], probe_reports[hi]
            for key, lo_v in a.rhs_values().items():
                assert 9.9 < b.rhs_values()[key] / lo_v < 10.1, key

    def test_denominators_healthy(self, probe_reports):
        exc = probe_reports[1e-4].excitation
        assert exc["gyro_rate_horizon"].m_lower > 1.0
        assert exc["accel_rate"].m_lower > 2.0
        assert exc["gyro_accel"].m_lower > 5e-4
        assert exc["net_rate"].m_lower > 5e-5

    def test_gentler_motion_loosens_every_bound(self, probe_reports, probe_bias):
        gentle = make_bounds_probe_scene(excitation_scale=0.5)
        cfg = probe_reports[1e-4].config
        rep = indistinguishable_set_bounds(gentle, probe_bias, cfg)
        base = probe_reports[1e-4]
        for key, value in rep.rhs_values().items():
            assert value > base.rhs_values()[key]
        assert rep.volume_proxy() > base.volume_proxy()

    def test_translation_bound_inverse_in_excitation(self, probe_reports,
                                                     probe_bias):
        strong = make_bounds_probe_scene(excitation_scale=4.0)
        cfg = probe_reports[1e-4].config
        rep = indistinguishable_set_bounds(strong, probe_bias, cfg)
        ratio = rep.rhs_translation / probe_reports[1e-4].rhs_translation
        assert ratio == pytest.approx(0.25, rel=1e-3)

    def test_no_excitation_gives_vacuous_bounds(self, probe_bias):
        # constant-rate spin and level flight: no quiet free-fall windows and
        # no gyro-rate excitation at all
        rate = BlockSum([WindowedBlock(
            Signal3.constant([0.0, 0.0, 0.3]), Window())])
        accel = AccelProgram([], duration=6.0)
        traj = AnalyticTrajectory(rate, np.eye(3), accel, 6.0, cache_dt=1e-3)
        scene = Scene(trajectory=traj,
                      groups=make_bounds_probe_scene().groups,
                      g_cb=Pose.identity())
        cfg = BoundsConfig(epsilon=1e-4)
        rep = indistinguishable_set_bounds(scene, probe_bias, cfg,
                                           grid_dt=5e-3, n_directions=512)
        assert rep.rhs_rotation == np.inf
        assert rep.rhs_scale == np.inf
        assert rep.rhs_translation == np.inf
        assert np.isinf(rep.volume_proxy())

    def test_report_invariants(self, probe_reports):
        rep = probe_reports[1e-4]
        for v in rep.rhs_values().values():
            assert v >= 0.0
        assert rep.k_scale > 0 and rep.k_translation > 0 and rep.k_gravity > 0
        assert rep.volume_proxy() == pytest.approx(
            rep.rhs_rotation * rep.rhs_scale * rep.rhs_translation
            * rep.rhs_gravity)


def _induced_drift_budget(gt, scene, bias, grid_dt=2e-2):
    """Sup of all bias-derivative norms implied by a gauge, on a dense grid."""
    traj = scene.trajectory
    ind = induced_biases(gt, traj, bias, scene.gamma)
    ts = np.linspace(0.1, traj.duration - 0.1,
                     int(round((traj.duration - 0.2) / grid_dt)) + 1)
    w_rate = ind.omega_rate(ts)
    a_rate = ind.alpha_rate(ts)
    h = 1e-3
    w_accel = (ind.omega_rate(ts + h) - ind.omega_rate(ts - h)) / (2.0 * h)
    return max(np.linalg.norm(w_rate, axis=1).max(),
               np.linalg.norm(a_rate, axis=1).max(),
               np.linalg.norm(w_accel, axis=1).max())


class TestGaugeWithinBounds:
    def test_identity_gauge_inside_with_full_slack(self, probe_reports):
        rep = probe_reports[1e-4]
        verdict = gauge_within_bounds(GaugeTransform.identity(), rep)
        assert verdict.inside
        for key, slack in verdict.slacks().items():
            assert slack == pytest.approx(rep.rhs_values()[key])

    def test_translation_violation_detected(self, probe_reports):
        rep = probe_reports[1e-4]
        t_a = np.array([2.0 * rep.rhs_translation, 0.0, 0.0])
        verdict = gauge_within_bounds(
            GaugeTransform(g_a=Pose(np.eye(3), t_a)), rep)
        assert not verdict.inside
        assert verdict.slack_translation < 0
        assert verdict.slack_rotation > 0

    def test_constructed_admissible_pairs_inside(self, probe_scene,
                                                 probe_reports):
        # small gauges produce induced biases; rounding their drift budget up
        # to a precomputed report level must land inside in every instance
        rng = np.random.default_rng(11)
        levels = sorted(probe_reports)
        for _ in range(20):
            mag = rng.uniform(1e-6, 5e-6)
            gt = GaugeTransform(
                g_a=Pose(exp_rot(rng.normal(0.0, mag, 3)),
                         rng.normal(0.0, mag, 3)),
                g_b=Pose(exp_rot(rng.normal(0.0, mag, 3)),
                         rng.normal(0.0, mag, 3)),
                sigma=float(np.exp(rng.normal(0.0, mag))))
            bias = make_bias_trajectory(
                "constant",
                constant_values=(rng.normal(0.0, 1e-3, 3),
                                 rng.normal(0.0, 1e-2, 3)))
            eps_real = _induced_drift_budget(gt, probe_scene, bias)
            usable = [lv for lv in levels if lv >= eps_real]
            assert usable, f"drift budget {eps_real:g} above all report levels"
            rep = probe_reports[usable[0]]
            assert np.linalg.norm(gt.g_a.translation) <= rep.config.translation_budget
            assert rep.config.scale_min <= gt.sigma <= rep.config.scale_max
            verdict = gauge_within_bounds(gt, rep, probe_scene.gamma)
            assert verdict.inside, verdict.slacks()
