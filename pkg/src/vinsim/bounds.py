"""Sensitivity bounds on the indistinguishable trajectory family.

Given a simulated scene and a drift budget for the bias trajectories, the
four constraints bound how far a gauge transform (rotation of the world
frame, scale, translation offset, gravity-direction tilt) can move the
state while the measured signals stay consistent with some admissible bias
realization.  The denominators are worst-direction excitation functionals
of the measured IMU signals over calibration intervals where the true
motion is quiet enough for the chained inequalities to apply.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .excitation import (
    ExcitationReport,
    SignalWindow,
    evaluate_excitation,
)
from .gauge import GaugeTransform
from .geometry import spectral_norm
from .sensors import GRAVITY_DEFAULT, BiasTrajectory, Scene
from .trajectory import AnalyticTrajectory, KinematicsBatch

# Denominators below this are treated as no excitation: the bound is vacuous
# (+inf) instead of exploding to meaningless finite values.
DENOMINATOR_FLOOR = 1e-9


@dataclass(frozen=True)
class Interval:
    """Closed time interval [t_start, t_end] with positive length."""

    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("interval must have positive length")

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class CalibrationIntervals:
    """Longest quiet windows enabling each bound; None when absent.

    rotation_quiet: first three rotation derivative norms within the drift
        budget (hosts the accel-rate denominator).
    freefall_rotation_quiet: first two rotation derivative norms and the
        specific-force deviation within budget (hosts the gyro-accel
        denominator).
    freefall_steady_spin: second/third rotation derivative norms and the
        specific-force deviation within budget; a constant spin is allowed
        (hosts the net-rate denominator).
    """

    rotation_quiet: Optional[Interval]
    freefall_rotation_quiet: Optional[Interval]
    freefall_steady_spin: Optional[Interval]


@dataclass(frozen=True)
class BoundsConfig:
    """Budgets under which the bounds are evaluated.

    epsilon: sup-norm budget on bias derivative trajectories (rad/s^2,
        m/s^3, rad/s^3 alike).
    translation_budget: cap on the gauge translation offset norm (m).
    scale_min, scale_max: admissible range of the gauge scale factor.
    gravity_norm: |gamma| used in the constants (m/s^2).
    """

    epsilon: float
    translation_budget: float = 0.0
    scale_min: float = 1.0
    scale_max: float = 1.0
    gravity_norm: float = 9.8

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.translation_budget < 0:
            raise ValueError("translation budget must be nonnegative")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("scale budgets must satisfy 0 < min <= max")
        if self.gravity_norm < 0:
            raise ValueError("gravity norm must be nonnegative")


def excitation_constants(cfg: BoundsConfig) -> Tuple[float, float, float]:
    """Constants absorbing the bounded cross terms of each constraint."""
    ms, ma, g = cfg.scale_max, cfg.translation_budget, cfg.gravity_norm
    k1 = 2.0 * ms * ma + (2.0 * ms + 1.0) * (g + 1.0)
    k2 = (2.0 * ms + 1.0) * (g + 3.0)
    k3 = 2.0 * ms + 3.0
    return k1, k2, k3


@dataclass(frozen=True)
class BoundsReport:
    """Per-constraint bounds plus the ingredients that produced them."""

    rhs_rotation: float      # bound on ||I - R_A|| (spectral)
    rhs_scale: float         # bound on |sigma - 1|
    rhs_translation: float   # bound on ||T_A|| (m)
    rhs_gravity: float       # bound on ||(I - R_B^T) gamma|| (m/s^2)
    k_scale: float
    k_translation: float
    k_gravity: float
    intervals: CalibrationIntervals
    excitation: Dict[str, Optional[ExcitationReport]]
    config: BoundsConfig

    def __post_init__(self):
        for name in ("rhs_rotation", "rhs_scale", "rhs_translation",
                     "rhs_gravity", "k_scale", "k_translation", "k_gravity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def rhs_values(self) -> Dict[str, float]:
        return {
            "rotation": self.rhs_rotation,
            "scale": self.rhs_scale,
            "translation": self.rhs_translation,
            "gravity": self.rhs_gravity,
        }

    def volume_proxy(self) -> float:
        """Product of the four bounds; comparison metric across scenarios."""
        return (self.rhs_rotation * self.rhs_scale
                * self.rhs_translation * self.rhs_gravity)


@dataclass(frozen=True)
class GaugeMembership:
    """Verdict of a gauge against a BoundsReport, with per-constraint slack."""

    inside: bool
    lhs_rotation: float
    lhs_scale: float
    lhs_translation: float
    lhs_gravity: float
    slack_rotation: float
    slack_scale: float
    slack_translation: float
    slack_gravity: float

    def slacks(self) -> Dict[str, float]:
        return {
            "rotation": self.slack_rotation,
            "scale": self.slack_scale,
            "translation": self.slack_translation,
            "gravity": self.slack_gravity,
        }


# ---------------------------------------------------------------------------
# Quiet-interval detection.

def _hat_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _spectral_norms(mats: np.ndarray) -> np.ndarray:
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


def condition_norms(batch: KinematicsBatch, gamma) -> Dict[str, np.ndarray]:
    """Pointwise norms entering the quiet-interval conditions.

    rotation_rate:  ||dR/dt||    = |omega|
    rotation_accel: ||d2R/dt2||  = ||hat(w)^2 + hat(wdot)||
    rotation_jerk:  ||d3R/dt3||  = ||hat(w)^3 + 2 hat(w)hat(wdot)
                                     + hat(wdot)hat(w) + hat(wddot)||
    accel_deviation: ||d2T/dt2 - gamma||
    """
    gamma = np.asarray(gamma, dtype=float)
    w = _hat_batch(batch.omega)
    wd = _hat_batch(batch.omega_dot)
    wdd = _hat_batch(batch.omega_ddot)
    w2 = w @ w
    return {
        "rotation_rate": np.linalg.norm(batch.omega, axis=-1),
        "rotation_accel": _spectral_norms(w2 + wd),
        "rotation_jerk": _spectral_norms(w2 @ w + 2.0 * (w @ wd) + wd @ w + wdd),
        "accel_deviation": np.linalg.norm(batch.alpha - gamma, axis=-1),
    }


def _longest_run(mask: np.ndarray, ts: np.ndarray) -> Optional[Interval]:
    """Longest contiguous True run spanning at least two samples."""
    if not mask.any():
        return None
    padded = np.concatenate([[False], mask, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = edges[::2], edges[1::2]
    lengths = stops - starts
    best = int(np.argmax(lengths))
    if lengths[best] < 2:
        return None
    return Interval(float(ts[starts[best]]), float(ts[stops[best] - 1]))


def _intervals_from_norms(norms: Dict[str, np.ndarray], ts: np.ndarray,
                          epsilon: float) -> CalibrationIntervals:
    rate = norms["rotation_rate"] <= epsilon
    acc = norms["rotation_accel"] <= epsilon
    jerk = norms["rotation_jerk"] <= epsilon
    dev = norms["accel_deviation"] <= epsilon
    return CalibrationIntervals(
        rotation_quiet=_longest_run(rate & acc & jerk, ts),
        freefall_rotation_quiet=_longest_run(rate & acc & dev, ts),
        freefall_steady_spin=_longest_run(acc & jerk & dev, ts),
    )


def _uniform_grid(duration: float, grid_dt: float) -> np.ndarray:
    n = max(2, int(round(duration / grid_dt)) + 1)
    return np.linspace(0.0, duration, n)


def find_calibration_intervals(traj: AnalyticTrajectory, epsilon: float,
                               gamma=GRAVITY_DEFAULT,
                               grid_dt: float = 1e-3) -> CalibrationIntervals:
    """Longest windows where the quiet conditions hold on a dense grid.

    The conditions constrain the true trajectory only; bias realizations do
    not enter.  Absent windows are reported as None (the dependent bound
    becomes vacuous, not an error).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    ts = _uniform_grid(traj.duration, grid_dt)
    batch = traj.sample_batch(ts)
    return _intervals_from_norms(condition_norms(batch, gamma), ts, epsilon)


# ---------------------------------------------------------------------------
# Measured-signal derivative synthesis.

def _bias_omega_accel(bias: BiasTrajectory, ts: np.ndarray,
                      h: float = 1e-4) -> np.ndarray:
    return (bias.omega_rate(ts + h) - bias.omega_rate(ts - h)) / (2.0 * h)


def measured_signal_derivatives(batch: KinematicsBatch, bias: BiasTrajectory,
                                gamma) -> Dict[str, np.ndarray]:
    """Noiseless measured-signal derivatives on the batch grid.

    gyro_rate:  d/dt (omega + omega_b)
    gyro_accel: d2/dt2 (omega + omega_b)
    accel_rate: d/dt (R^T (T'' - gamma) + alpha_b)
    net_rate:   measured rate minus its bias, i.e. the true body rate
    """
    gamma = np.asarray(gamma, dtype=float)
    ts = batch.ts
    f = np.einsum("nji,nj->ni", batch.R, batch.alpha - gamma)
    f_dot = -np.cross(batch.omega, f) + np.einsum(
        "nji,nj->ni", batch.R, batch.alpha_dot)
    return {
        "gyro_rate": batch.omega_dot + bias.omega_rate(ts),
        "gyro_accel": batch.omega_ddot + _bias_omega_accel(bias, ts),
        "accel_rate": f_dot + bias.alpha_rate(ts),
        "net_rate": batch.omega,
    }


def _window_slice(signal: np.ndarray, ts: np.ndarray, dt: float,
                  interval: Optional[Interval]) -> Optional[SignalWindow]:
    if interval is None:
        return None
    i0 = int(np.searchsorted(ts, interval.t_start - 0.5 * dt))
    i1 = int(np.searchsorted(ts, interval.t_end + 0.5 * dt))
    if i1 - i0 < 2:
        return None
    return SignalWindow(signal[i0:i1], dt=dt, t_start=float(ts[i0]))


def indistinguishable_set_bounds(scene: Scene, biases: BiasTrajectory,
                                 cfg: BoundsConfig, *,
                                 grid_dt: float = 1e-3,
                                 n_directions: int = 4096,
                                 refine_iters: int = 50,
                                 horizon: Optional[float] = None,
                                 floor: float = DENOMINATOR_FLOOR) -> BoundsReport:
    """Evaluate the four gauge bounds for a scene and bias realization.

    Denominators use the pessimistic lower envelope of the worst-direction
    excitation (lattice value minus the covering correction), so the
    returned bounds only widen relative to the exact functionals.
    """
    traj = scene.trajectory
    gamma = np.asarray(scene.gamma, dtype=float)
    duration = traj.duration if horizon is None else float(horizon)
    ts = _uniform_grid(duration, grid_dt)
    dt = float(ts[1] - ts[0])
    batch = traj.sample_batch(ts)

    intervals = _intervals_from_norms(
        condition_norms(batch, gamma), ts, cfg.epsilon)
    signals = measured_signal_derivatives(batch, biases, gamma)

    def _evaluate(window: Optional[SignalWindow]) -> Optional[ExcitationReport]:
        if window is None:
            return None
        return evaluate_excitation(window, n_directions=n_directions,
                                   refine_iters=refine_iters)

    exc = {
        "gyro_rate_horizon": _evaluate(
            SignalWindow(signals["gyro_rate"], dt=dt, t_start=float(ts[0]))),
        "accel_rate": _evaluate(_window_slice(
            signals["accel_rate"], ts, dt, intervals.rotation_quiet)),
        "gyro_accel": _evaluate(_window_slice(
            signals["gyro_accel"], ts, dt, intervals.freefall_rotation_quiet)),
        "net_rate": _evaluate(_window_slice(
            signals["net_rate"], ts, dt, intervals.freefall_steady_spin)),
    }

    def _m_low(key: str) -> float:
        rep = exc[key]
        return 0.0 if rep is None else rep.m_lower

    def _bound(numerator: float, denominator: float) -> float:
        # zero numerator means the constraint pins its quantity exactly,
        # whatever the excitation; the family collapses rather than blowing up
        if numerator == 0.0:
            return 0.0
        if not np.isfinite(numerator):
            return np.inf
        if denominator <= floor:
            return np.inf
        return numerator / denominator

    k1, k2, k3 = excitation_constants(cfg)
    e = cfg.epsilon
    ms, mslo = cfg.scale_max, cfg.scale_min
    ma, g = cfg.translation_budget, cfg.gravity_norm

    rhs_rotation = _bound(2.0 * e, _m_low("gyro_rate_horizon"))
    rhs_scale = _bound(k1 * e + ms * rhs_rotation, _m_low("accel_rate"))
    rhs_translation = _bound(
        e * (k2 + (2.0 * ms + 1.0) * ma), mslo * _m_low("gyro_accel"))
    net = exc["net_rate"]
    net_sup = 0.0 if net is None else net.M
    rhs_gravity = _bound(
        e * (k3 + ms * ma) + (rhs_scale + e) * net_sup * g,
        mslo * _m_low("net_rate"))

    return BoundsReport(
        rhs_rotation=rhs_rotation,
        rhs_scale=rhs_scale,
        rhs_translation=rhs_translation,
        rhs_gravity=rhs_gravity,
        k_scale=k1,
        k_translation=k2,
        k_gravity=k3,
        intervals=intervals,
        excitation=exc,
        config=cfg,
    )


def gauge_within_bounds(gt: GaugeTransform, report: BoundsReport,
                        gamma=GRAVITY_DEFAULT) -> GaugeMembership:
    """Check a gauge against the four bounds; slack = bound minus actual."""
    gamma = np.asarray(gamma, dtype=float)
    eye = np.eye(3)
    lhs_rotation = spectral_norm(eye - gt.g_a.rotation)
    lhs_scale = abs(gt.sigma - 1.0)
    lhs_translation = float(np.linalg.norm(gt.g_a.translation))
    lhs_gravity = float(np.linalg.norm((eye - gt.g_b.rotation.T) @ gamma))
    slack_rotation = report.rhs_rotation - lhs_rotation
    slack_scale = report.rhs_scale - lhs_scale
    slack_translation = report.rhs_translation - lhs_translation
    slack_gravity = report.rhs_gravity - lhs_gravity
    inside = bool(min(slack_rotation, slack_scale,
                      slack_translation, slack_gravity) >= 0.0)
    return GaugeMembership(
        inside=inside,
        lhs_rotation=lhs_rotation,
        lhs_scale=lhs_scale,
        lhs_translation=lhs_translation,
        lhs_gravity=lhs_gravity,
        slack_rotation=slack_rotation,
        slack_scale=slack_scale,
        slack_translation=slack_translation,
        slack_gravity=slack_gravity,
    )
