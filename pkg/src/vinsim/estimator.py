"""Error-state Kalman filter for vision-aided inertial navigation.

State: body pose and velocity, gyro/accel biases, camera-from-body
alignment, one pose per feature group, and per-feature bearing/log-depth
parameters. The error state is tangent-space (3-vector rotation errors,
multiplicative on the right); gauge freedom is removed by exclusion: the
reference group's yaw-about-gravity and translation, and three bearings
per group, are simply absent from the error vector. The reference keeps
two tilt coordinates: gravity makes map tilt observable, so freezing it
would claim information the data does not carry.

The filter deliberately models bias rates as independent white noise even
when the truth violates that, which is the mismatch the Monte-Carlo
experiments are designed to expose.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    Pose, act, compose, exp_rot, hat, invert, renormalize_rotation,
)
from .gauge import pick_pinned_triple
from .sensors import GRAVITY_DEFAULT, ImuSample, ImuStream, VisionStream

# 99% quantile of chi^2 with 2 dof, the per-feature innovation gate
CHI2_2DOF_99 = 9.210340371976184

# error-vector layout of the always-present core block
SL_T = slice(0, 3)
SL_TH = slice(3, 6)
SL_V = slice(6, 9)
SL_WB = slice(9, 12)
SL_AB = slice(12, 15)
SL_THCB = slice(15, 18)
SL_TCB = slice(18, 21)
CORE_DIM = 21
DYN_DIM = 15  # T, theta, v, omega_bias, alpha_bias evolve under the IMU


class NonStationaryInit(ValueError):
    """Raised when the initialization window fails the stationarity check."""


@dataclass
class FilterConfig:
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_DEFAULT.copy())
    gyro_noise_std: float = 1e-3       # rad/s, per-sample
    accel_noise_std: float = 1e-2      # m/s^2, per-sample
    gyro_bias_walk: float = 1e-6       # rad/s per sqrt(s), filter model
    accel_bias_walk: float = 1e-5      # m/s^2 per sqrt(s), filter model
    pixel_std: float = 1e-3
    gate_nis: float = CHI2_2DOF_99
    n_min_group: int = 5
    min_init_samples: int = 10
    stationary_accel_var: float = 1e-2  # (m/s^2)^2, per-axis rejection level
    prior_tilt_std: float = 5e-3        # rad, about the two non-gravity axes
    prior_velocity_std: float = 1e-3
    prior_gyro_bias_std: float = 1e-3
    prior_accel_bias_std: float = 1e-2
    prior_align_rot_std: float = 0.02
    prior_align_trans_std: float = 0.05
    prior_logdepth_std: float = 0.6
    init_depth: float = 2.5             # m, depth assigned to new features
    gate_recovery_frames: int = 5       # consecutive gates before depth reset
    gyro_bias_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_cb_prior: Pose = field(default_factory=Pose.identity)


@dataclass
class FeatureState:
    y: np.ndarray              # bearing in the group frame, 2-vector
    log_depth: float
    pinned: bool = False
    gated_streak: int = 0      # consecutive frames rejected by the NIS gate

    def point(self) -> np.ndarray:
        z = math.exp(self.log_depth)
        return np.array([self.y[0] * z, self.y[1] * z, z])


@dataclass
class GroupState:
    gid: int
    pose: Pose                 # camera-at-birth frame expressed in world
    features: Dict[int, FeatureState]
    # Reference group only: 3x2 basis of the local tilt plane (orthogonal
    # to the gravity direction pulled into the group frame). The pinned
    # gauge removes yaw-about-gravity and translation; the two tilt
    # directions stay estimated because gravity makes them observable.
    tilt_basis: Optional[np.ndarray] = None


@dataclass
class FeatureTrack:
    """Bookkeeping for one tracked feature across frames."""

    feature_id: int
    group_id: int
    ts: List[float] = field(default_factory=list)
    measurements: List[np.ndarray] = field(default_factory=list)
    status: str = "active"

    def append(self, t: float, y) -> None:
        if self.ts and t <= self.ts[-1]:
            raise ValueError("measurements must be time-ordered")
        self.ts.append(float(t))
        self.measurements.append(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class Frame:
    """One camera frame: measured bearings keyed by (group, feature)."""

    t: float
    group_ids: np.ndarray
    feature_ids: np.ndarray
    pixels: np.ndarray

    def __len__(self):
        return len(self.feature_ids)


def frame_from_stream(stream: VisionStream, k: int) -> Frame:
    vis = stream.visible[k]
    return Frame(t=float(stream.ts[k]),
                 group_ids=stream.group_of_feature[vis],
                 feature_ids=stream.feature_ids[vis],
                 pixels=stream.pixels[k][vis])


@dataclass(frozen=True)
class FeatureBirth:
    group_id: int
    feature_id: int
    bearing: np.ndarray        # first measured 2-vector


@dataclass(frozen=True)
class TrackerEvents:
    t: float
    births: Tuple[FeatureBirth, ...] = ()
    losses: Tuple[Tuple[int, int], ...] = ()   # (group_id, feature_id)


@dataclass
class FrameStats:
    t: float
    n_used: int = 0
    n_gated: int = 0
    skipped: bool = False
    nis: float = 0.0
    dof: int = 0
    innovation: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class FilterDiagnostics:
    skipped_frames: int = 0
    gated_total: int = 0
    reference_switches: int = 0
    ignored_births: int = 0
    depth_resets: int = 0


@dataclass
class FilterState:
    t: float
    T: np.ndarray
    R: np.ndarray
    v: np.ndarray
    omega_bias: np.ndarray
    alpha_bias: np.ndarray
    g_cb: Pose
    groups: Dict[int, GroupState]
    reference_gid: Optional[int]
    cov: np.ndarray
    index: Dict
    config: FilterConfig
    last_imu: Optional[ImuSample] = None
    diagnostics: FilterDiagnostics = field(default_factory=FilterDiagnostics)

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    def body_pose(self) -> Pose:
        return Pose(self.R, self.T)

    def camera_pose(self) -> Pose:
        return compose(self.body_pose(), invert(self.g_cb))

    def copy(self) -> "FilterState":
        groups = {
            gid: GroupState(
                gid=g.gid, pose=g.pose,
                features={fid: FeatureState(f.y.copy(), f.log_depth, f.pinned,
                                            f.gated_streak)
                          for fid, f in g.features.items()},
                tilt_basis=None if g.tilt_basis is None
                else g.tilt_basis.copy())
            for gid, g in self.groups.items()
        }
        return FilterState(
            t=self.t, T=self.T.copy(), R=self.R.copy(), v=self.v.copy(),
            omega_bias=self.omega_bias.copy(),
            alpha_bias=self.alpha_bias.copy(), g_cb=self.g_cb,
            groups=groups, reference_gid=self.reference_gid,
            cov=self.cov.copy(), index=dict(self.index), config=self.config,
            last_imu=self.last_imu, diagnostics=replace(self.diagnostics))


def _build_index(groups: Dict[int, GroupState],
                 reference_gid: Optional[int]) -> Tuple[Dict, int]:
    index = {"T": SL_T, "theta": SL_TH, "v": SL_V, "omega_bias": SL_WB,
             "alpha_bias": SL_AB, "theta_cb": SL_THCB, "T_cb": SL_TCB}
    pos = CORE_DIM
    for gid, grp in groups.items():
        # reference keeps only its two tilt coordinates; the other four
        # pose dofs are the pinned gauge
        width = 2 if gid == reference_gid else 6
        index[("group", gid)] = slice(pos, pos + width)
        pos += width
        for fid, feat in grp.features.items():
            if not feat.pinned:
                index[("feat_y", gid, fid)] = slice(pos, pos + 2)
                pos += 2
            index[("feat_z", gid, fid)] = slice(pos, pos + 1)
            pos += 1
    return index, pos


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def _minimal_rotation(a, b) -> np.ndarray:
    """Rotation with smallest angle mapping unit vector a to unit vector b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(a @ b)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: any perpendicular axis serves
        perp = np.array([1.0, 0.0, 0.0])
        if abs(a[0]) > 0.9:
            perp = np.array([0.0, 1.0, 0.0])
        axis = np.cross(a, perp)
        return exp_rot(axis / np.linalg.norm(axis) * math.pi)
    return exp_rot(axis / s * math.atan2(s, c))


def filter_init(config: FilterConfig, window: ImuStream) -> FilterState:
    """Construct the initial state from a stationary IMU window.

    The attitude is the minimal rotation aligning the averaged accelerometer
    with -gravity; any accelerometer bias therefore tilts the estimate by the
    angle between gravity and gravity-minus-bias, uncompensated. Heading
    about gravity is defined to be zero.
    """
    if len(window) < config.min_init_samples:
        raise ValueError(
            f"need at least {config.min_init_samples} IMU samples, "
            f"got {len(window)}")
    accel = np.asarray(window.alpha_imu, dtype=float)
    if np.var(accel, axis=0).max() > config.stationary_accel_var:
        raise NonStationaryInit(
            "accel variance above stationary threshold "
            f"({np.var(accel, axis=0).max():.3g} > "
            f"{config.stationary_accel_var:.3g})")

    gamma = np.asarray(config.gravity, dtype=float)
    up = -gamma / np.linalg.norm(gamma)
    abar = accel.mean(axis=0)
    r0 = _minimal_rotation(abar / np.linalg.norm(abar), up)

    cov = np.zeros((CORE_DIM, CORE_DIM))
    ghat = gamma / np.linalg.norm(gamma)
    w = r0.T @ ghat
    cov[SL_TH, SL_TH] = config.prior_tilt_std**2 * (np.eye(3) - np.outer(w, w))
    cov[SL_V, SL_V] = config.prior_velocity_std**2 * np.eye(3)
    cov[SL_WB, SL_WB] = config.prior_gyro_bias_std**2 * np.eye(3)
    cov[SL_AB, SL_AB] = config.prior_accel_bias_std**2 * np.eye(3)
    cov[SL_THCB, SL_THCB] = config.prior_align_rot_std**2 * np.eye(3)
    cov[SL_TCB, SL_TCB] = config.prior_align_trans_std**2 * np.eye(3)

    index, dim = _build_index({}, None)
    assert dim == CORE_DIM
    return FilterState(
        t=float(window.ts[-1]), T=np.zeros(3), R=r0, v=np.zeros(3),
        omega_bias=np.asarray(config.gyro_bias_mean, dtype=float).copy(),
        alpha_bias=np.asarray(config.accel_bias_mean, dtype=float).copy(),
        g_cb=config.g_cb_prior, groups={}, reference_gid=None,
        cov=cov, index=index, config=config, last_imu=window.sample(-1))


def _error_jacobian(state: FilterState, omega_hat: np.ndarray,
                    f_hat: np.ndarray) -> np.ndarray:
    f = np.zeros((DYN_DIM, DYN_DIM))
    f[SL_T, SL_V] = np.eye(3)
    f[SL_TH, SL_TH] = -hat(omega_hat)
    f[SL_TH, SL_WB] = -np.eye(3)
    f[SL_V, SL_TH] = -state.R @ hat(f_hat)
    f[SL_V, SL_AB] = -state.R
    return f


def filter_predict(state: FilterState, imu: ImuSample, dt: float) -> FilterState:
    """Propagate mean and covariance across one IMU interval.

    The mean integrates the mechanization with the current bias estimates
    (RK4, inputs interpolated linearly between the previous and new sample);
    the covariance uses the first-order error-state transition with process
    noise from the configured sensor noise and bias-walk densities.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    out = state.copy()
    cfg = state.config
    gamma = np.asarray(cfg.gravity, dtype=float)
    prev = state.last_imu if state.last_imu is not None else imu
    w0 = prev.omega_imu - state.omega_bias
    w1 = imu.omega_imu - state.omega_bias
    a0 = prev.alpha_imu - state.alpha_bias
    a1 = imu.alpha_imu - state.alpha_bias
    wm = 0.5 * (w0 + w1)
    am = 0.5 * (a0 + a1)

    def deriv(r, t, v, w, a):
        return r @ hat(w), v, r @ a + gamma

    r, t, v = state.R, state.T, state.v
    k1 = deriv(r, t, v, w0, a0)
    k2 = deriv(r + 0.5 * dt * k1[0], t + 0.5 * dt * k1[1],
               v + 0.5 * dt * k1[2], wm, am)
    k3 = deriv(r + 0.5 * dt * k2[0], t + 0.5 * dt * k2[1],
               v + 0.5 * dt * k2[2], wm, am)
    k4 = deriv(r + dt * k3[0], t + dt * k3[1], v + dt * k3[2], w1, a1)
    out.R = renormalize_rotation(
        r + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]))
    out.T = t + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    out.v = v + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])

    f = _error_jacobian(state, wm, am)
    fdt = f * dt
    phi = np.eye(DYN_DIM) + fdt + 0.5 * (fdt @ fdt)
    qd = np.zeros((DYN_DIM, DYN_DIM))
    qd[SL_TH, SL_TH] = (cfg.gyro_noise_std * dt)**2 * np.eye(3)
    qd[SL_V, SL_V] = (cfg.accel_noise_std * dt)**2 * np.eye(3)
    qd[SL_WB, SL_WB] = cfg.gyro_bias_walk**2 * dt * np.eye(3)
    qd[SL_AB, SL_AB] = cfg.accel_bias_walk**2 * dt * np.eye(3)

    p = out.cov
    core = slice(0, DYN_DIM)
    p[core, :] = phi @ p[core, :]
    p[:, core] = p[:, core] @ phi.T
    p[core, core] += qd
    out.cov = _symmetrize(p)
    out.t = state.t + dt
    out.last_imu = imu
    return out


def _projection_rows(state: FilterState, gid: int, fid: int):
    """Predicted bearing and sparse jacobian entries for one feature."""
    grp = state.groups[gid]
    feat = grp.features[fid]
    p_local = feat.point()
    r_j, t_j = grp.pose.rotation, grp.pose.translation
    x_world = r_j @ p_local + t_j
    x_body = state.R.T @ (x_world - state.T)
    r_cb, t_cb = state.g_cb.rotation, state.g_cb.translation
    x_cam = r_cb @ x_body + t_cb
    z = x_cam[2]
    if z <= 1e-6:
        return None
    y_pred = x_cam[:2] / z
    d_pi = np.array([[1.0, 0.0, -x_cam[0] / z],
                     [0.0, 1.0, -x_cam[1] / z]]) / z

    d_xb = d_pi @ r_cb                     # 2x3, sensitivity to x_body
    d_xw = d_xb @ state.R.T                # 2x3, sensitivity to x_world
    rows = {
        "T": -d_xw,
        "theta": d_xb @ hat(x_body),
        "theta_cb": -d_pi @ r_cb @ hat(x_body),
        "T_cb": d_pi,
    }
    if gid == state.reference_gid:
        rows[("group", gid)] = (-d_xw @ r_j @ hat(p_local)) @ grp.tilt_basis
    else:
        rows[("group", gid)] = np.hstack(
            [-d_xw @ r_j @ hat(p_local), d_xw @ r_j])
    if not feat.pinned:
        rows[("feat_y", gid, fid)] = (
            d_xw @ r_j[:, :2] * math.exp(feat.log_depth))
    rows[("feat_z", gid, fid)] = (d_xw @ r_j @ p_local)[:, None]
    return y_pred, rows


def filter_update_vision(state: FilterState, frame: Frame,
                         pixel_std: Optional[float] = None
                         ) -> Tuple[FilterState, FrameStats]:
    """Joseph-form EKF update from one camera frame.

    Features are gated individually at the 99% Mahalanobis quantile; the
    survivors update jointly. A singular stacked innovation covariance skips
    the frame and increments the diagnostic counter.
    """
    cfg = state.config
    r_pix = (cfg.pixel_std if pixel_std is None else pixel_std)**2
    stats = FrameStats(t=frame.t)
    out = state.copy()
    p = out.cov
    n = out.dim

    rows_h: List[np.ndarray] = []
    resid: List[np.ndarray] = []
    stale: List[Tuple[int, int, np.ndarray]] = []
    for gid, fid, y_meas in zip(frame.group_ids, frame.feature_ids,
                                frame.pixels):
        gid, fid = int(gid), int(fid)
        if gid not in out.groups or fid not in out.groups[gid].features:
            raise ValueError(f"frame references unknown feature ({gid},{fid})")
        feat = out.groups[gid].features[fid]
        pred = _projection_rows(out, gid, fid)
        if pred is None:
            continue
        y_pred, sparse = pred
        h_i = np.zeros((2, n))
        for key, block in sparse.items():
            h_i[:, out.index[key]] = block
        r_i = np.asarray(y_meas, dtype=float) - y_pred
        s_i = h_i @ p @ h_i.T + r_pix * np.eye(2)
        try:
            nis_i = float(r_i @ np.linalg.solve(s_i, r_i))
        except np.linalg.LinAlgError:
            nis_i = np.inf
        if nis_i > cfg.gate_nis:
            stats.n_gated += 1
            feat.gated_streak += 1
            if feat.gated_streak >= cfg.gate_recovery_frames:
                stale.append((gid, fid, np.asarray(y_meas, dtype=float)))
            continue
        feat.gated_streak = 0
        rows_h.append(h_i)
        resid.append(r_i)

    out.diagnostics.gated_total += stats.n_gated
    if not rows_h:
        _recover_stale_depths(out, stale)
        return out, stats

    h = np.vstack(rows_h)
    r = np.concatenate(resid)
    s = h @ p @ h.T + r_pix * np.eye(len(r))
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        out.diagnostics.skipped_frames += 1
        stats.skipped = True
        _recover_stale_depths(out, stale)
        return out, stats

    sinv_r = np.linalg.solve(chol.T, np.linalg.solve(chol, r))
    k = np.linalg.solve(chol.T, np.linalg.solve(chol, h @ p)).T
    _apply_error(out, k @ r)
    a = np.eye(n) - k @ h
    out.cov = _symmetrize(a @ p @ a.T + r_pix * (k @ k.T))

    stats.n_used = len(rows_h)
    stats.nis = float(r @ sinv_r)
    stats.dof = len(r)
    stats.innovation = r
    _recover_stale_depths(out, stale)
    return out, stats


def _recover_stale_depths(state: FilterState,
                          stale: List[Tuple[int, int, np.ndarray]]) -> None:
    """Re-triangulate depths of persistently gated features.

    An individually gated feature receives no correction, so a depth
    estimate that lands in the tail during the early fast-information
    phase can stay inconsistent indefinitely while its variance keeps
    shrinking through correlations. After gate_recovery_frames misses in
    a row the depth marginal is declared stale: the camera point is
    linear in the depth scale s = exp(log_depth), x_cam = c0 + s*d, so s
    is re-solved from the current measurement in closed form and the
    covariance row is reset to the birth prior, discarding the stale
    cross terms. Features without parallax are left alone; the reset
    retries on later frames while the streak persists.
    """
    for gid, fid, y_meas in stale:
        grp = state.groups[gid]
        feat = grp.features[fid]
        u = np.array([feat.y[0], feat.y[1], 1.0])
        rot = state.g_cb.rotation @ state.R.T
        d = rot @ (grp.pose.rotation @ u)
        c0 = rot @ (grp.pose.translation - state.T) + state.g_cb.translation
        den = np.array([d[0] - y_meas[0] * d[2], d[1] - y_meas[1] * d[2]])
        num = np.array([c0[0] - y_meas[0] * c0[2], c0[1] - y_meas[1] * c0[2]])
        norm2 = float(den @ den)
        if norm2 < 1e-4:
            continue
        scale = -float(num @ den) / norm2
        if scale < 1e-3 or c0[2] + scale * d[2] <= 1e-6:
            continue
        feat.log_depth = math.log(scale)
        feat.gated_streak = 0
        sl = state.index[("feat_z", gid, fid)]
        state.cov[sl, :] = 0.0
        state.cov[:, sl] = 0.0
        state.cov[sl, sl] = state.config.prior_logdepth_std ** 2
        state.diagnostics.depth_resets += 1


def _apply_error(state: FilterState, dx: np.ndarray) -> None:
    state.T = state.T + dx[SL_T]
    state.R = renormalize_rotation(state.R @ exp_rot(dx[SL_TH]))
    state.v = state.v + dx[SL_V]
    state.omega_bias = state.omega_bias + dx[SL_WB]
    state.alpha_bias = state.alpha_bias + dx[SL_AB]
    state.g_cb = Pose(
        renormalize_rotation(state.g_cb.rotation @ exp_rot(dx[SL_THCB])),
        state.g_cb.translation + dx[SL_TCB])
    for gid, grp in state.groups.items():
        sl = state.index[("group", gid)]
        r_j, t_j = grp.pose.rotation, grp.pose.translation
        if gid == state.reference_gid:
            grp.pose = Pose(
                renormalize_rotation(r_j @ exp_rot(grp.tilt_basis @ dx[sl])),
                t_j)
        else:
            grp.pose = Pose(renormalize_rotation(r_j @ exp_rot(dx[sl][:3])),
                            t_j + r_j @ dx[sl][3:])
        for fid, feat in grp.features.items():
            ykey = ("feat_y", gid, fid)
            if ykey in state.index:
                feat.y = feat.y + dx[state.index[ykey]]
            feat.log_depth += float(
                dx[state.index[("feat_z", gid, fid)].start])


def manage_groups(state: FilterState, events: TrackerEvents) -> FilterState:
    """Apply tracker births and losses to the filter state.

    New co-appearing features form a group once at least n_min arrive
    together; the group pose is the current camera pose estimate, gets three
    pinned non-coplanar bearings, and is cloned into the covariance with
    full correlation to the current pose and alignment errors. The first
    group additionally anchors the gauge: its yaw-about-gravity and
    translation are pinned, leaving two estimated tilt coordinates. Losing
    the reference group re-anchors the gauge on the next group without
    discarding correlation.
    """
    out = state.copy()
    for gid, fid in events.losses:
        if gid in out.groups and fid in out.groups[gid].features:
            _remove_feature(out, gid, fid)

    by_group: Dict[int, List[FeatureBirth]] = {}
    for b in events.births:
        by_group.setdefault(int(b.group_id), []).append(b)
    for gid, births in by_group.items():
        if gid in out.groups:
            for b in births:
                _add_feature(out, gid, int(b.feature_id),
                             np.asarray(b.bearing, dtype=float), pinned=False)
        elif len(births) >= out.config.n_min_group:
            _create_group(out, gid, births)
        else:
            out.diagnostics.ignored_births += len(births)
    return out


def _remap_covariance(state: FilterState, init_blocks: Dict) -> None:
    """Rebuild the index after a structural change and carry the covariance.

    Blocks whose keys survive keep their values (dropped keys are
    marginalized out); brand-new keys start from the diagonal blocks in
    init_blocks with zero cross-covariance.
    """
    new_index, new_dim = _build_index(state.groups, state.reference_gid)
    keep_new: List[int] = []
    keep_old: List[int] = []
    for key, nsl in new_index.items():
        if key in state.index:
            osl = state.index[key]
            keep_new.extend(range(nsl.start, nsl.stop))
            keep_old.extend(range(osl.start, osl.stop))
    p = np.zeros((new_dim, new_dim))
    p[np.ix_(keep_new, keep_new)] = state.cov[np.ix_(keep_old, keep_old)]
    for key, block in init_blocks.items():
        p[new_index[key], new_index[key]] = block
    state.cov = p
    state.index = new_index


def _add_feature(state: FilterState, gid: int, fid: int, bearing: np.ndarray,
                 pinned: bool) -> None:
    cfg = state.config
    state.groups[gid].features[fid] = FeatureState(
        y=bearing.copy(), log_depth=math.log(cfg.init_depth), pinned=pinned)
    blocks = {("feat_z", gid, fid): np.array([[cfg.prior_logdepth_std**2]])}
    if not pinned:
        blocks[("feat_y", gid, fid)] = cfg.pixel_std**2 * np.eye(2)
    _remap_covariance(state, blocks)


def _remove_feature(state: FilterState, gid: int, fid: int) -> None:
    grp = state.groups[gid]
    del grp.features[fid]
    if not grp.features:
        _remove_group(state, gid)
        return
    _remap_covariance(state, {})


def _remove_group(state: FilterState, gid: int) -> None:
    if state.reference_gid == gid:
        survivors = [g for g in state.groups if g != gid]
        if survivors:
            _switch_reference(state, survivors[0])
        else:
            state.groups[gid].tilt_basis = None
            state.reference_gid = None
    del state.groups[gid]
    _remap_covariance(state, {})


def _clone_pose_jacobian(state: FilterState) -> np.ndarray:
    """d(group pose error) / d(state error) at group creation.

    The new group frame is the camera pose estimate, so its local error is a
    deterministic function of the body pose and alignment errors.
    """
    r_cb = state.g_cb.rotation
    u = r_cb.T @ state.g_cb.translation
    j = np.zeros((6, state.dim))
    j[0:3, SL_TH] = r_cb
    j[0:3, SL_THCB] = -r_cb
    j[3:6, SL_T] = r_cb @ state.R.T
    j[3:6, SL_TH] = r_cb @ hat(u)
    j[3:6, SL_THCB] = -r_cb @ hat(u)
    j[3:6, SL_TCB] = -np.eye(3)
    return j


def _create_group(state: FilterState, gid: int,
                  births: Sequence[FeatureBirth]) -> None:
    pose = state.camera_pose()
    is_reference = state.reference_gid is None
    old_index = dict(state.index)
    # stochastic cloning: the new pose error is J times the current error,
    # so it enters fully correlated, not as fresh noise
    j = _clone_pose_jacobian(state)
    cross = state.cov @ j.T
    state.groups[gid] = GroupState(gid=gid, pose=pose, features={})
    _remap_covariance(state, {("group", gid): j @ cross})
    sl = state.index[("group", gid)]
    for key, osl in old_index.items():
        if key in state.index:
            nsl = state.index[key]
            state.cov[nsl, sl] = cross[osl, :]
            state.cov[sl, nsl] = cross[osl, :].T
    state.cov = _symmetrize(state.cov)

    for b in births:
        _add_feature(state, gid, int(b.feature_id),
                     np.asarray(b.bearing, dtype=float), pinned=False)
    bearings3 = np.array([[b.bearing[0], b.bearing[1], 1.0] for b in births])
    triple = pick_pinned_triple(bearings3)
    if triple is not None:
        _pin_bearings(state, gid,
                      [int(births[i].feature_id) for i in triple])
    if is_reference:
        _pin_reference(state, gid)


def _pin_bearings(state: FilterState, gid: int,
                  pinned_fids: Sequence[int]) -> None:
    """Anchor a group's internal frame on three measured bearings.

    A group pose plus camera-frame feature coordinates is redundant by an
    internal rigid transform; freezing three non-coplanar bearings at their
    first measured values removes that slack. The transform implied by the
    pinned bearings' own error coordinates is subtracted from every error
    coordinate of the group (exact first-order reframing, nothing outside
    the group moves), after which the pinned bearing dimensions are
    identically zero and get dropped.
    """
    grp = state.groups[gid]
    n = state.dim
    sl_pose = state.index[("group", gid)]
    d = np.zeros((n, 6))
    d[sl_pose.start:sl_pose.start + 3, 0:3] = np.eye(3)
    d[sl_pose.start + 3:sl_pose.stop, 3:6] = np.eye(3)
    pin_rows = {}
    for fid, feat in grp.features.items():
        p = feat.point()
        z = math.exp(feat.log_depth)
        d_pi = np.array([[1.0, 0.0, -feat.y[0]],
                         [0.0, 1.0, -feat.y[1]]]) / z
        a = np.hstack([d_pi @ hat(p), -d_pi])
        d[state.index[("feat_y", gid, fid)], :] = a
        d[state.index[("feat_z", gid, fid)], :] = (
            np.array([0.0, 0.0, 1.0 / z]) @ np.hstack([hat(p), -np.eye(3)]))
        if fid in pinned_fids:
            pin_rows[fid] = a
    m = np.vstack([pin_rows[f] for f in pinned_fids])
    s = np.zeros((6, n))
    minv = np.linalg.inv(m)
    for r, fid in enumerate(pinned_fids):
        s[:, state.index[("feat_y", gid, fid)]] = minv[:, 2 * r:2 * r + 2]
    g = np.eye(n) - d @ s
    state.cov = _symmetrize(g @ state.cov @ g.T)
    for fid in pinned_fids:
        grp.features[fid].pinned = True
    _remap_covariance(state, {})


def _local_tilt_basis(r_k: np.ndarray, gamma_hat: np.ndarray) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to R_k^T gamma_hat."""
    a = r_k.T @ gamma_hat
    e = np.zeros(3)
    e[int(np.argmin(np.abs(a)))] = 1.0
    v1 = e - (e @ a) * a
    v1 = v1 / np.linalg.norm(v1)
    return np.column_stack([v1, np.cross(a, v1)])


def _gauge_orbit_matrix(state: FilterState,
                        gamma_hat: np.ndarray) -> np.ndarray:
    """Derivative of every error coordinate along the pinned-gauge orbit.

    Columns: [yaw about gravity, world translation x, y, z]. The orbit acts
    on the world side, so biases, alignment, and group-frame features are
    untouched; a reference group's tilt coordinates are orthogonal to the
    yaw direction by construction and also stay zero.
    """
    d = np.zeros((state.dim, 4))
    d[SL_T, 0] = hat(gamma_hat) @ state.T
    d[SL_T, 1:4] = np.eye(3)
    d[SL_TH, 0] = state.R.T @ gamma_hat
    d[SL_V, 0] = hat(gamma_hat) @ state.v
    for gid, grp in state.groups.items():
        sl = state.index[("group", gid)]
        if sl.stop - sl.start != 6:
            continue
        r_m, t_m = grp.pose.rotation, grp.pose.translation
        d[sl.start:sl.start + 3, 0] = r_m.T @ gamma_hat
        d[sl.start + 3:sl.stop, 0] = r_m.T @ hat(gamma_hat) @ t_m
        d[sl.start + 3:sl.stop, 1:4] = r_m.T
    return d


def _pin_reference(state: FilterState, gid: int) -> None:
    """Anchor the gauge on a group currently carrying a full 6-dim block.

    The yaw-about-gravity and translation components of the group's pose
    error are absorbed into the map frame definition: the orbit direction
    they parametrize is subtracted from every error coordinate (exact
    first-order reframing, no correlation discarded), after which the
    group block is restricted to its two tilt coordinates.
    """
    gamma = np.asarray(state.config.gravity, dtype=float)
    gamma_hat = gamma / np.linalg.norm(gamma)
    grp = state.groups[gid]
    r_k, t_k = grp.pose.rotation, grp.pose.translation
    a = r_k.T @ gamma_hat
    basis = _local_tilt_basis(r_k, gamma_hat)
    sl = state.index[("group", gid)]

    # gauge parameters implied by this group's own error coordinates
    s = np.zeros((4, state.dim))
    s[0, sl.start:sl.start + 3] = a
    s[1:4, sl.start + 3:sl.stop] = r_k
    s[1:4, sl.start:sl.start + 3] = -np.outer(hat(gamma_hat) @ t_k, a)
    g = np.eye(state.dim) - _gauge_orbit_matrix(state, gamma_hat) @ s

    old_index = dict(state.index)
    old_dim = state.dim
    grp.tilt_basis = basis
    state.reference_gid = gid
    new_index, new_dim = _build_index(state.groups, gid)
    m = np.zeros((new_dim, old_dim))
    for key, nsl in new_index.items():
        osl = old_index[key]
        if key == ("group", gid):
            m[nsl, osl.start:osl.start + 3] = basis.T
        else:
            m[nsl, osl] = np.eye(nsl.stop - nsl.start)
    t = m @ g
    state.cov = _symmetrize(t @ state.cov @ t.T)
    state.index = new_index


def _expand_reference(state: FilterState) -> None:
    """Give the reference group back a full 6-dim block (zero-filled pins)."""
    gid = state.reference_gid
    grp = state.groups[gid]
    basis = grp.tilt_basis
    old_index = dict(state.index)
    old_dim = state.dim
    grp.tilt_basis = None
    state.reference_gid = None
    new_index, new_dim = _build_index(state.groups, None)
    m = np.zeros((new_dim, old_dim))
    for key, nsl in new_index.items():
        osl = old_index[key]
        if key == ("group", gid):
            m[nsl.start:nsl.start + 3, osl] = basis
        else:
            m[nsl, osl] = np.eye(nsl.stop - nsl.start)
    state.cov = _symmetrize(m @ state.cov @ m.T)
    state.index = new_index


def _switch_reference(state: FilterState, new_gid: int) -> None:
    """Re-anchor the gauge on another group.

    The old reference is released (its pinned coordinates return with zero
    variance, exact in the old frame definition), then the new group's
    yaw-about-gravity and translation errors are absorbed into the frame.
    Estimates never change and no correlation is discarded, so innovation
    whiteness survives the switch.
    """
    if state.reference_gid is not None:
        _expand_reference(state)
    _pin_reference(state, new_gid)
    state.diagnostics.reference_switches += 1


def is_diverged(state: FilterState, max_position: float = 1e4,
                max_cov: float = 1e8) -> bool:
    finite = (np.isfinite(state.T).all() and np.isfinite(state.R).all()
              and np.isfinite(state.cov).all())
    if not finite:
        return True
    return bool(np.linalg.norm(state.T) > max_position
                or np.diag(state.cov).max() > max_cov)


def covariance_min_eigenvalue(state: FilterState) -> float:
    return float(np.linalg.eigvalsh(_symmetrize(state.cov)).min())
