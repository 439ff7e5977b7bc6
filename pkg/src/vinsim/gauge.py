"""Gauge transforms: families of scenes indistinguishable from bearing and
IMU data, the biases they induce, and canonicalization helpers.

The family is parametrized by (g_A, g_B, sigma) acting as g(t) ->
sigma(g_B g(t) g_A), plus a per-group frame offset d_i. All maps here use the
exact group operations; first-order expansions appear only in tests as
consistency checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .geometry import (
    Pose, compose, exp_rot, hat, invert, log_rot, rotation_angle,
)
from .sensors import BiasTrajectory, FeatureGroup, Scene
from .trajectory import KinematicsBatch


@dataclass(frozen=True)
class GaugeTransform:
    """g(t) -> sigma(g_B g(t) g_A), with optional per-group frame offsets.

    group_offsets maps group id to the offset d_i composing the group's
    reference frame as g_i d_i; unset groups keep d_i = identity, which makes
    the group frame follow the trajectory map.
    """

    g_a: Pose = field(default_factory=Pose.identity)
    g_b: Pose = field(default_factory=Pose.identity)
    sigma: float = 1.0
    group_offsets: Optional[Dict[int, Pose]] = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @staticmethod
    def identity() -> "GaugeTransform":
        return GaugeTransform()

    def offset_for(self, gid: int) -> Pose:
        if self.group_offsets and gid in self.group_offsets:
            return self.group_offsets[gid]
        return Pose.identity()

    def magnitude(self) -> float:
        """Rough size of the deviation from identity, for continuity tests."""
        return max(
            rotation_angle(self.g_a.rotation),
            rotation_angle(self.g_b.rotation),
            float(np.linalg.norm(self.g_a.translation)),
            float(np.linalg.norm(self.g_b.translation)),
            abs(self.sigma - 1.0),
        )


@dataclass(frozen=True)
class ZeroInputGauge:
    """The bias-preserving subfamily: rotation about gravity plus a world
    translation. This is the ambiguity that remains when biases must stay
    constant."""

    theta: float = 0.0
    t_b: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_full_gauge(self, gamma) -> GaugeTransform:
        u = np.asarray(gamma, dtype=float)
        n = np.linalg.norm(u)
        if n == 0:
            raise ValueError("gamma must be nonzero")
        g_b = Pose(exp_rot(u / n * self.theta), np.asarray(self.t_b, dtype=float))
        return GaugeTransform(g_a=Pose.identity(), g_b=g_b, sigma=1.0)


# ---------------------------------------------------------------------------
# Scene transformation.

class GaugedTrajectory:
    """View of a trajectory under g(t) -> sigma(g_B g(t) g_A): poses, their
    derivatives, and body rates, all exact."""

    def __init__(self, base, gt: GaugeTransform):
        self.base = base
        self.gt = gt
        self.duration = base.duration

    def sample_batch(self, ts) -> KinematicsBatch:
        b = self.base.sample_batch(ts)
        gt = self.gt
        ra, ta = gt.g_a.rotation, gt.g_a.translation
        rb, tb = gt.g_b.rotation, gt.g_b.translation
        s = gt.sigma

        r_new = np.einsum("ij,njk,kl->nil", rb, b.R, ra)
        t_new = s * (np.einsum("ij,nj->ni", rb, np.einsum("nij,j->ni", b.R, ta) + b.T) + tb)

        w_hat = _hat_batch(b.omega)
        wd_hat = _hat_batch(b.omega_dot)
        wdd_hat = _hat_batch(b.omega_ddot)
        rdot = np.einsum("nij,njk->nik", b.R, w_hat)
        rddot = np.einsum("nij,njk->nik", b.R, w_hat @ w_hat + wd_hat)
        rdddot = np.einsum("nij,njk->nik", b.R,
                           w_hat @ w_hat @ w_hat + 2.0 * (w_hat @ wd_hat)
                           + wd_hat @ w_hat + wdd_hat)

        v_new = s * np.einsum("ij,nj->ni", rb, np.einsum("nij,j->ni", rdot, ta) + b.v)
        a_new = s * np.einsum("ij,nj->ni", rb, np.einsum("nij,j->ni", rddot, ta) + b.alpha)
        j_new = s * np.einsum("ij,nj->ni", rb, np.einsum("nij,j->ni", rdddot, ta) + b.alpha_dot)

        w_new = np.einsum("ji,nj->ni", ra, b.omega)
        wd_new = np.einsum("ji,nj->ni", ra, b.omega_dot)
        wdd_new = np.einsum("ji,nj->ni", ra, b.omega_ddot)

        return KinematicsBatch(ts=b.ts, R=r_new, T=t_new, v=v_new, alpha=a_new,
                               omega=w_new, omega_dot=wd_new,
                               omega_ddot=wdd_new, alpha_dot=j_new)

    def sample_kinematics(self, t: float):
        return self.sample_batch(np.array([float(t)])).at(0)

    def pose(self, t: float) -> Pose:
        k = self.sample_kinematics(t)
        return Pose(k.R, k.T)

    def rotations(self, ts):
        return self.sample_batch(ts).R


def _hat_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _scaled_compose(g1: Pose, g2: Pose, sigma: float) -> Pose:
    """Pose of sigma(g1 g2): rotation composed, translation scaled."""
    g = compose(g1, g2)
    return Pose(g.rotation, sigma * g.translation)


def apply_full_gauge(scene: Scene, gt: GaugeTransform) -> Scene:
    """Transformed scene: trajectory sigma(g_B g g_A), alignment
    sigma(g_cb g_A), group frames sigma(g_B g_i d_i g_A), feature coordinates
    sigma((g_A^-1 d_i^-1)(y Z)). World points land on sigma(g_B X) and camera
    coordinates on sigma X_c, so noiseless projections are preserved."""
    s = gt.sigma
    new_groups = []
    for grp in scene.groups:
        d = gt.offset_for(grp.gid)
        gi_new = Pose(
            compose(compose(gt.g_b, compose(grp.g_ref, d)), gt.g_a).rotation,
            s * compose(compose(gt.g_b, compose(grp.g_ref, d)), gt.g_a).translation,
        )
        h = compose(invert(gt.g_a), invert(d))
        coords = grp.bearings * grp.depths[:, None]
        new_coords = s * (coords @ h.rotation.T + h.translation)
        depths = new_coords[:, 2]
        if np.any(depths <= 0):
            raise ValueError(
                f"gauge transform drives group {grp.gid} depths nonpositive")
        new_groups.append(FeatureGroup(
            gid=grp.gid, t_birth=grp.t_birth, g_ref=gi_new,
            bearings=new_coords / depths[:, None], depths=depths,
            feature_ids=grp.feature_ids))

    g_cb_new = _scaled_compose(scene.g_cb, gt.g_a, s)
    return Scene(trajectory=GaugedTrajectory(scene.trajectory, gt),
                 groups=tuple(new_groups), g_cb=g_cb_new, gamma=scene.gamma,
                 allow_gravity_override=scene.allow_gravity_override)


def apply_zero_input_gauge(scene: Scene, zg: ZeroInputGauge) -> Scene:
    """Rotation about gravity plus world translation; leaves alignment,
    feature coordinates, biases, and both IMU channels unchanged."""
    return apply_full_gauge(scene, zg.as_full_gauge(scene.gamma))


# ---------------------------------------------------------------------------
# Induced biases.

class InducedBiasTrajectory:
    """Biases that make the transformed trajectory satisfy the mechanization
    driven by the original IMU stream.

    omega side: w~_b = (I - R_A^T) w_imu + R_A^T w_b
    alpha side: R_A a~_b = sigma a_b - sigma (R^T Rddot) T_A
                - (sigma I - R_A) a_imu - R^T (sigma I - R_B^T) gamma
    """

    def __init__(self, gt: GaugeTransform, trajectory, true_bias: BiasTrajectory,
                 gamma):
        self.gt = gt
        self.trajectory = trajectory
        self.true_bias = true_bias
        self.gamma = np.asarray(gamma, dtype=float)
        self.kind = "induced"
        self.epsilon = float("nan")
        self.within_bounds = False  # unknown a priori; bounds module decides

    def _batch(self, ts):
        return self.trajectory.sample_batch(np.atleast_1d(np.asarray(ts, dtype=float)))

    def omega(self, ts) -> np.ndarray:
        b = self._batch(ts)
        wb = self.true_bias.omega(b.ts)
        w_imu = b.omega + wb
        ra = self.gt.g_a.rotation
        return w_imu - (w_imu - wb) @ ra  # (I - R_A^T) w_imu + R_A^T w_b

    def alpha(self, ts) -> np.ndarray:
        b = self._batch(ts)
        gt = self.gt
        s = gt.sigma
        ra, ta = gt.g_a.rotation, gt.g_a.translation
        rb = gt.g_b.rotation
        ab = self.true_bias.alpha(b.ts)
        a_imu = np.einsum("nji,nj->ni", b.R, b.alpha - self.gamma) + ab

        w_hat = _hat_batch(b.omega)
        wd_hat = _hat_batch(b.omega_dot)
        body_curv = w_hat @ w_hat + wd_hat          # R^T Rddot
        term_ta = s * np.einsum("nij,j->ni", body_curv, ta)
        grav = (s * np.eye(3) - rb.T) @ self.gamma
        term_grav = np.einsum("nji,j->ni", b.R, grav)
        rhs = s * ab - term_ta - (s * a_imu - a_imu @ ra.T) - term_grav
        return rhs @ ra  # left-multiply by R_A^T

    def omega_rate(self, ts, h: float = 1e-5) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return (self.omega(ts + h) - self.omega(ts - h)) / (2.0 * h)

    def alpha_rate(self, ts, h: float = 1e-5) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return (self.alpha(ts + h) - self.alpha(ts - h)) / (2.0 * h)


def induced_biases(gt: GaugeTransform, trajectory, true_bias: BiasTrajectory,
                   gamma) -> InducedBiasTrajectory:
    return InducedBiasTrajectory(gt, trajectory, true_bias, gamma)


def transformed_initial_state(gt: GaugeTransform, trajectory):
    """Initial pose sigma(g_B g(0) g_A) and velocity sigma R_B (Rdot(0) T_A + v(0))."""
    k = trajectory.sample_kinematics(0.0)
    pose = Pose(
        gt.g_b.rotation @ k.R @ gt.g_a.rotation,
        gt.sigma * (gt.g_b.rotation @ (k.R @ gt.g_a.translation + k.T)
                    + gt.g_b.translation),
    )
    rdot = k.R @ hat(k.omega)
    v0 = gt.sigma * gt.g_b.rotation @ (rdot @ gt.g_a.translation + k.v)
    return pose, v0


# ---------------------------------------------------------------------------
# Measurement discrepancy.

def measurement_discrepancy(scene_a: Scene, scene_b: Scene, cam_ts) -> float:
    """Max distance between noiseless projections of co-visible features."""
    from .sensors import simulate_vision

    va = simulate_vision(scene_a, cam_ts)
    vb = simulate_vision(scene_b, cam_ts)
    if va.pixels.shape != vb.pixels.shape or not np.array_equal(
            va.feature_ids, vb.feature_ids):
        raise ValueError("scenes have mismatched camera schedules or features")
    both = va.visible & vb.visible
    if not both.any():
        return 0.0
    diff = np.linalg.norm(va.pixels - vb.pixels, axis=-1)
    return float(diff[both].max())


# ---------------------------------------------------------------------------
# Zero-input fitting and canonicalization.

def _best_rotation_about(u: np.ndarray, r: np.ndarray) -> float:
    """Angle theta maximizing tr(R_u(theta)^T r)."""
    a = float(np.trace(r) - u @ r @ u)
    b = float(-np.trace(hat(u) @ r))
    return math.atan2(b, a)


def fit_zero_input_gauge(gt: GaugeTransform, gamma):
    """Best (theta, T_B) of the zero-input family and the residual distance
    of the gauge from that family (0 exactly on the family)."""
    u = np.asarray(gamma, dtype=float)
    u = u / np.linalg.norm(u)
    theta = _best_rotation_about(u, gt.g_b.rotation)
    fitted = ZeroInputGauge(theta=theta, t_b=gt.g_b.translation.copy())
    residual = max(
        rotation_angle(exp_rot(u * theta).T @ gt.g_b.rotation),
        rotation_angle(gt.g_a.rotation),
        float(np.linalg.norm(gt.g_a.translation)),
        abs(gt.sigma - 1.0),
    )
    return fitted, residual


@dataclass(frozen=True)
class GaugeAnchors:
    """What the canonical scene pins: the reference group's frame and, per
    group, three designated bearing rows (first-observation values)."""

    ref_gid: int
    ref_pose: Pose
    pinned_bearings: Dict[int, np.ndarray]   # gid -> (3, 3) bearing rows
    pinned_index: Dict[int, np.ndarray]      # gid -> (3,) row indices


def pick_pinned_triple(bearings: np.ndarray, min_sv: float = 1e-3):
    """Indices of three bearings whose matrix is safely nonsingular (the
    non-coplanar-with-origin condition); None if no such triple exists."""
    bearings = np.asarray(bearings, dtype=float)
    n = len(bearings)
    if n < 3:
        return None
    best, best_sv = None, min_sv
    from itertools import combinations
    for idx in combinations(range(n), 3):
        m = bearings[list(idx)]
        sv = np.linalg.svd(m, compute_uv=False)[2]
        if sv > best_sv:
            best, best_sv = np.array(idx), sv
    return best


def make_gauge_anchors(scene: Scene, ref_gid: int) -> GaugeAnchors:
    pinned_b, pinned_i = {}, {}
    ref_pose = None
    for grp in scene.groups:
        idx = pick_pinned_triple(grp.bearings)
        if idx is None:
            continue
        pinned_i[grp.gid] = idx
        pinned_b[grp.gid] = grp.bearings[idx].copy()
        if grp.gid == ref_gid:
            ref_pose = grp.g_ref
    if ref_pose is None:
        raise ValueError(f"reference group {ref_gid} missing or unpinnable")
    return GaugeAnchors(ref_gid=ref_gid, ref_pose=ref_pose,
                        pinned_bearings=pinned_b, pinned_index=pinned_i)


def fix_gauge(scene: Scene, anchors: GaugeAnchors, bearing_tol: float = 1e-7):
    """Canonicalize a scene against anchors: solve the zero-input gauge that
    returns the reference group's frame to its anchored pose and undo it.
    Groups whose pinned bearings drifted from their anchors are reported as
    unpinnable rather than fatal.

    Returns (canonical scene, report dict with the removed degrees of
    freedom and any flagged groups)."""
    ref = next(g for g in scene.groups if g.gid == anchors.ref_gid)
    delta_r = ref.g_ref.rotation @ anchors.ref_pose.rotation.T
    u = scene.gamma / np.linalg.norm(scene.gamma)
    theta = _best_rotation_about(u, delta_r)
    rot_residual = rotation_angle(exp_rot(u * theta).T @ delta_r)
    # translation part after removing the rotation
    q = Pose(exp_rot(u * theta),
             ref.g_ref.translation - exp_rot(u * theta) @ anchors.ref_pose.translation)
    undo = ZeroInputGauge(theta=-theta, t_b=-(q.rotation.T @ q.translation))
    canon = apply_zero_input_gauge(scene, undo)

    flagged = []
    for grp in canon.groups:
        idx = anchors.pinned_index.get(grp.gid)
        if idx is None:
            flagged.append(grp.gid)
            continue
        drift = np.abs(grp.bearings[idx] - anchors.pinned_bearings[grp.gid]).max()
        if drift > bearing_tol:
            flagged.append(grp.gid)
    report = {
        "theta_removed": theta,
        "t_b_removed": q.translation.copy(),
        "rotation_residual": rot_residual,
        "flagged_groups": flagged,
        "pinned_dof": 4 + 6 * sum(1 for g in canon.groups if g.gid not in flagged
                                  and g.gid != anchors.ref_gid),
    }
    return canon, report


def two_direction_pinning_degenerate(g_ref: Pose, bearings: np.ndarray,
                                     gamma, tol_rad: float = 5e-4) -> bool:
    """True when a 2-bearing pinning cannot fix the gravity-rotation gauge:
    both pinned rays lie in the horizon plane orthogonal to gravity (within
    tol_rad of it)."""
    u = np.asarray(gamma, dtype=float)
    u = u / np.linalg.norm(u)
    rays = bearings @ g_ref.rotation.T
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    elevations = np.abs(np.arcsin(np.clip(rays @ u, -1.0, 1.0)))
    return bool(np.all(elevations < tol_rad))
