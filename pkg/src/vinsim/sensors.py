"""Sensor synthesis: IMU streams with bias and noise, bounded-drift bias
trajectories, point clouds, feature groups, and perspective projection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose, compose, invert, act
from .trajectory import (
    AnalyticTrajectory, Kinematics, KinematicsBatch, Signal3, SinusoidAxis,
)

GRAVITY_DEFAULT = np.array([0.0, 0.0, -9.8])
NEAR_PLANE_M = 0.01

NOISE_GYRO_DEFAULT = 1e-3    # rad/s
NOISE_ACCEL_DEFAULT = 1e-2   # m/s^2
NOISE_PIXEL_DEFAULT = 1e-3   # normalized image units


# ---------------------------------------------------------------------------
# IMU measurement model.

@dataclass(frozen=True)
class ImuSample:
    t: float
    omega_imu: np.ndarray
    alpha_imu: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.omega_imu).all() and np.isfinite(self.alpha_imu).all()):
            raise ValueError("IMU sample must be finite")


@dataclass(frozen=True)
class ImuStream:
    ts: np.ndarray
    omega_imu: np.ndarray
    alpha_imu: np.ndarray

    def __len__(self):
        return len(self.ts)

    def sample(self, i: int) -> ImuSample:
        return ImuSample(float(self.ts[i]), self.omega_imu[i], self.alpha_imu[i])


def measure_gyro(kin: Kinematics, bias, noise_std: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """omega_imu = omega + omega_b + n."""
    out = kin.omega + np.asarray(bias, dtype=float)
    if noise_std > 0.0:
        out = out + rng.normal(0.0, noise_std, 3)
    return out


def measure_accel(kin: Kinematics, bias, gamma=GRAVITY_DEFAULT,
                  noise_std: float = 0.0,
                  rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """alpha_imu = R^T (alpha - gamma) + alpha_b + n."""
    out = kin.R.T @ (kin.alpha - np.asarray(gamma, dtype=float)) + np.asarray(bias, dtype=float)
    if noise_std > 0.0:
        out = out + rng.normal(0.0, noise_std, 3)
    return out


def simulate_imu(batch: KinematicsBatch, bias: "BiasTrajectory",
                 gamma=GRAVITY_DEFAULT,
                 noise_gyro: float = 0.0, noise_accel: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> ImuStream:
    """Vectorized gyro+accel synthesis over a kinematics batch."""
    gamma = np.asarray(gamma, dtype=float)
    w = batch.omega + bias.omega(batch.ts)
    a = np.einsum("nji,nj->ni", batch.R, batch.alpha - gamma) + bias.alpha(batch.ts)
    if noise_gyro > 0.0:
        w = w + rng.normal(0.0, noise_gyro, w.shape)
    if noise_accel > 0.0:
        a = a + rng.normal(0.0, noise_accel, a.shape)
    return ImuStream(ts=batch.ts, omega_imu=w, alpha_imu=a)


# ---------------------------------------------------------------------------
# Bias trajectories.

@dataclass(frozen=True)
class BiasTrajectory:
    """Gyro and accel bias as functions of time.

    within_bounds marks membership in the bounded-drift class (first and
    second derivative norms at most epsilon); the random-walk kind violates
    it by construction and is flagged accordingly.
    """

    kind: str
    epsilon: float
    within_bounds: bool
    _omega_signal: Optional[Signal3] = None
    _alpha_signal: Optional[Signal3] = None
    _walk_ts: Optional[np.ndarray] = None
    _walk_omega: Optional[np.ndarray] = None
    _walk_alpha: Optional[np.ndarray] = None

    def omega(self, ts) -> np.ndarray:
        return self._eval(ts, self._omega_signal, self._walk_omega)

    def alpha(self, ts) -> np.ndarray:
        return self._eval(ts, self._alpha_signal, self._walk_alpha)

    def omega_rate(self, ts) -> np.ndarray:
        return self._eval_rate(ts, self._omega_signal, self._walk_omega)

    def alpha_rate(self, ts) -> np.ndarray:
        return self._eval_rate(ts, self._alpha_signal, self._walk_alpha)

    def _eval(self, ts, signal, walk):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if signal is not None:
            return signal.eval(ts, 0)
        return np.stack([np.interp(ts, self._walk_ts, walk[:, i]) for i in range(3)], axis=-1)

    def _eval_rate(self, ts, signal, walk):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if signal is not None:
            return signal.eval(ts, 1)
        grad = np.gradient(walk, self._walk_ts, axis=0)
        return np.stack([np.interp(ts, self._walk_ts, grad[:, i]) for i in range(3)], axis=-1)


def _sinusoid_bias_signal(epsilon: float, amplitude: float,
                          rng: np.random.Generator,
                          min_freq_hz: float) -> Signal3:
    """Per-axis a*sin(2 pi f t + phi) with the axis budget set so the vector
    norms of the first and second derivatives stay within epsilon."""
    axes = []
    # 1/sqrt(3) per-axis shares keep the 3-vector amplitude and derivative
    # norms within their budgets.
    a = amplitude / math.sqrt(3.0)
    eps_axis = epsilon / math.sqrt(3.0)
    for _ in range(3):
        if a == 0.0 or epsilon == 0.0:
            axes.append(SinusoidAxis(const=0.0 if a == 0.0 else a * math.sin(rng.uniform(0, 2 * np.pi))))
            continue
        f_max = min(eps_axis / (2 * np.pi * a), math.sqrt(eps_axis / a) / (2 * np.pi))
        if f_max < min_freq_hz:
            raise ValueError(
                f"no admissible frequency: budget {amplitude} needs f <= {f_max:.3g} Hz "
                f"but min_freq_hz={min_freq_hz}"
            )
        f = rng.uniform(max(min_freq_hz, 0.25 * f_max), f_max)
        phi = rng.uniform(0.0, 2 * np.pi)
        axes.append(SinusoidAxis(0.0, np.array([a]), np.array([2 * np.pi * f]), np.array([phi])))
    return Signal3(*axes)


def make_bias_trajectory(kind: str, epsilon: float = 0.0,
                         amplitude_budget=(1e-3, 1e-2),
                         duration: float = 60.0, seed: int = 0,
                         constant_values=None,
                         walk_std=(1e-5, 1e-4), walk_dt: float = 1e-2,
                         min_freq_hz: float = 0.0) -> BiasTrajectory:
    """Generate a bias trajectory of the requested kind.

    kinds: 'constant' (fixed vectors), 'sinusoidal-bounded' (per-axis
    sinusoids with derivative norms within epsilon), 'random-walk'
    (integrated white noise; outside the bounded-drift class).
    amplitude_budget = (gyro amplitude rad/s, accel amplitude m/s^2).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    rng = np.random.default_rng(seed)
    gyro_amp, accel_amp = (amplitude_budget if np.ndim(amplitude_budget) else
                           (float(amplitude_budget), float(amplitude_budget)))

    if kind == "constant":
        if constant_values is not None:
            wb, ab = (np.asarray(v, dtype=float) for v in constant_values)
        else:
            wb = rng.normal(0.0, gyro_amp / math.sqrt(3.0), 3)
            ab = rng.normal(0.0, accel_amp / math.sqrt(3.0), 3)
        return BiasTrajectory(
            kind=kind, epsilon=epsilon, within_bounds=True,
            _omega_signal=Signal3.constant(wb), _alpha_signal=Signal3.constant(ab),
        )

    if kind == "sinusoidal-bounded":
        ws = _sinusoid_bias_signal(epsilon, gyro_amp, rng, min_freq_hz)
        as_ = _sinusoid_bias_signal(epsilon, accel_amp, rng, min_freq_hz)
        return BiasTrajectory(kind=kind, epsilon=epsilon, within_bounds=True,
                              _omega_signal=ws, _alpha_signal=as_)

    if kind == "random-walk":
        n = int(math.ceil(duration / walk_dt)) + 2
        ts = np.arange(n) * walk_dt
        dw = rng.normal(0.0, walk_std[0] * math.sqrt(walk_dt), (n, 3))
        da = rng.normal(0.0, walk_std[1] * math.sqrt(walk_dt), (n, 3))
        dw[0] = 0.0
        da[0] = 0.0
        return BiasTrajectory(
            kind=kind, epsilon=epsilon, within_bounds=False,
            _walk_ts=ts, _walk_omega=np.cumsum(dw, axis=0), _walk_alpha=np.cumsum(da, axis=0),
        )

    raise ValueError(f"unknown bias kind {kind!r}")


def bias_bound_report(bias: BiasTrajectory, duration: float,
                      grid_dt: float = 1e-3) -> dict:
    """Max derivative norms on a dense grid, for checking the drift-class
    invariant."""
    ts = np.arange(int(math.ceil(duration / grid_dt)) + 1) * grid_dt
    wr = bias.omega_rate(ts)
    ar = bias.alpha_rate(ts)
    report = {
        "max_omega_rate": float(np.linalg.norm(wr, axis=1).max()),
        "max_alpha_rate": float(np.linalg.norm(ar, axis=1).max()),
    }
    if bias._omega_signal is not None:
        wr2 = bias._omega_signal.eval(ts, 2)
        report["max_omega_accel"] = float(np.linalg.norm(wr2, axis=1).max())
    return report


def bias_wander(bias: BiasTrajectory, duration: float,
                grid_dt: float = 0.05) -> Tuple[float, float]:
    """Largest excursion of each bias from its initial value over the run.

    Returns (gyro wander rad/s, accel wander m/s^2); the accel value is
    what experiment configs size against the accelerometer noise floor.
    """
    ts = np.arange(int(math.ceil(duration / grid_dt)) + 1) * grid_dt
    w = bias.omega(ts)
    a = bias.alpha(ts)
    return (float(np.linalg.norm(w - w[0], axis=1).max()),
            float(np.linalg.norm(a - a[0], axis=1).max()))


# ---------------------------------------------------------------------------
# Point clouds and feature groups.

def spawn_point_cloud(n: int, region, seed: int = 0,
                      require_noncoplanar_with_origin: bool = False,
                      max_redraws: int = 100) -> np.ndarray:
    """i.i.d. uniform points in an axis-aligned box, redrawn until the
    centered point matrix is safely non-coplanar."""
    if n < 3:
        raise ValueError("need at least 3 points")
    low, high = (np.asarray(b, dtype=float) for b in region)
    if np.any(high <= low):
        raise ValueError("degenerate region")
    extent = float(np.max(high - low))
    rng = np.random.default_rng(seed)
    for _ in range(max_redraws):
        pts = rng.uniform(low, high, (n, 3))
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        planar_ok = (n == 3) or sv[2] > 1e-6 * extent
        origin_ok = True
        if require_noncoplanar_with_origin:
            sv0 = np.linalg.svd(pts[:3], compute_uv=False)
            origin_ok = sv0[2] > 1e-6 * extent
        if planar_ok and origin_ok:
            return pts
    raise RuntimeError("could not draw an admissible point cloud")


@dataclass(frozen=True)
class FeatureGroup:
    """Features born together: reference pose (the camera pose at birth),
    per-feature homogeneous bearings [y1, y2, 1], and positive depths."""

    gid: int
    t_birth: float
    g_ref: Pose
    bearings: np.ndarray       # (F, 3), last coordinate 1
    depths: np.ndarray         # (F,), > 0
    feature_ids: np.ndarray    # (F,) global ids

    def __post_init__(self):
        if np.any(self.depths <= 0):
            raise ValueError("feature depths must be positive")
        if not np.allclose(self.bearings[:, 2], 1.0):
            raise ValueError("bearings must be homogeneous with last coordinate 1")

    def __len__(self):
        return len(self.depths)

    def world_points(self) -> np.ndarray:
        return act(self.g_ref, self.bearings * self.depths[:, None])


@dataclass(frozen=True)
class Scene:
    """Trajectory, feature groups, camera-from-body alignment, gravity."""

    trajectory: AnalyticTrajectory
    groups: tuple
    g_cb: Pose
    gamma: np.ndarray = field(default_factory=lambda: GRAVITY_DEFAULT.copy())
    allow_gravity_override: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        g = float(np.linalg.norm(self.gamma))
        if not self.allow_gravity_override and not (9.7 <= g <= 9.9):
            raise ValueError(f"|gamma|={g} outside [9.7, 9.9]; set allow_gravity_override")

    @property
    def n_features(self) -> int:
        return sum(len(g) for g in self.groups)

    def all_world_points(self) -> np.ndarray:
        return np.vstack([g.world_points() for g in self.groups])


def make_group_from_points(gid: int, t_birth: float, body_pose: Pose,
                           g_cb: Pose, points: np.ndarray,
                           feature_ids=None) -> FeatureGroup:
    """Build a group whose reference pose is the camera pose at birth; points
    behind the near plane are rejected."""
    g_ref = compose(body_pose, invert(g_cb))
    pc = act(invert(g_ref), points)
    if np.any(pc[:, 2] <= NEAR_PLANE_M):
        raise ValueError("group contains points at or behind the camera near plane")
    bearings = pc / pc[:, 2:3]
    if feature_ids is None:
        feature_ids = np.arange(len(points))
    return FeatureGroup(gid=gid, t_birth=float(t_birth), g_ref=g_ref,
                        bearings=bearings, depths=pc[:, 2].copy(),
                        feature_ids=np.asarray(feature_ids, dtype=int))


# ---------------------------------------------------------------------------
# Projection.

def project_points_camera(points_cam: np.ndarray):
    """Perspective projection with near-plane visibility flags."""
    z = points_cam[..., 2]
    visible = z > NEAR_PLANE_M
    zsafe = np.where(visible, z, 1.0)
    pix = points_cam[..., :2] / zsafe[..., None]
    return pix, visible


def project_features(body_pose: Pose, g_cb: Pose, groups: Sequence[FeatureGroup],
                     noise_std: float = 0.0,
                     rng: Optional[np.random.Generator] = None):
    """Project every feature of every group: y = pi(g_cb g^-1 X_s) + n.

    Returns (pixels (F,2), visible (F,), feature_ids (F,)) in group order.
    Invisible features keep their ideal pixel slot but are flagged.
    """
    world = np.vstack([g.world_points() for g in groups])
    ids = np.concatenate([g.feature_ids for g in groups])
    cam_from_world = compose(g_cb, invert(body_pose))
    pix, visible = project_points_camera(act(cam_from_world, world))
    if noise_std > 0.0:
        pix = pix + rng.normal(0.0, noise_std, pix.shape)
    return pix, visible, ids


@dataclass(frozen=True)
class VisionStream:
    """Per-frame pixel measurements for a fixed feature set."""

    ts: np.ndarray             # (K,)
    pixels: np.ndarray         # (K, F, 2)
    visible: np.ndarray        # (K, F) bool
    feature_ids: np.ndarray    # (F,)
    group_of_feature: np.ndarray  # (F,) group ids aligned with feature_ids

    def __len__(self):
        return len(self.ts)


def simulate_vision(scene: Scene, cam_ts, noise_std: float = 0.0,
                    rng: Optional[np.random.Generator] = None) -> VisionStream:
    cam_ts = np.asarray(cam_ts, dtype=float)
    batch = scene.trajectory.sample_batch(cam_ts)
    world = scene.all_world_points()
    ids = np.concatenate([g.feature_ids for g in scene.groups])
    gof = np.concatenate([np.full(len(g), g.gid) for g in scene.groups])

    # X_c = g_cb (R^T (X - T)) per frame, vectorized over frames and features
    xb = np.einsum("kji,fj->kfi", batch.R, world) - np.einsum(
        "kji,kj->ki", batch.R, batch.T)[:, None, :]
    xc = np.einsum("ij,kfj->kfi", scene.g_cb.rotation, xb) + scene.g_cb.translation
    pix, visible = project_points_camera(xc)
    if noise_std > 0.0:
        pix = pix + rng.normal(0.0, noise_std, pix.shape)
    return VisionStream(ts=cam_ts, pixels=pix, visible=visible,
                        feature_ids=ids, group_of_feature=gof)
