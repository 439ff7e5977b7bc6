"""Analytic trajectory synthesis and mechanization integration.

A trajectory is a body angular-velocity program (closed-form omega and its
first two derivatives) paired with a translation program (closed-form up to
jerk). R(t) is obtained by integrating Rdot = R hat(omega) with a 4th-order
Magnus/2-point-Gauss stepper on a cached grid; omega-side derivatives stay
analytic so downstream sensitivity formulas never touch finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import Pose, hat, quat_from_matrix, renormalize_rotation

_SQRT3 = math.sqrt(3.0)
_BINOM = {0: (1,), 1: (1, 1), 2: (1, 2, 1), 3: (1, 3, 3, 1)}


# ---------------------------------------------------------------------------
# Smooth window (C^4 polynomial step, so third derivatives of windowed
# signals stay continuous).

def _smoothstep9(u: np.ndarray, order: int) -> np.ndarray:
    """Nonic smoothstep S with S(0)=0, S(1)=1 and S'..S'''' zero at both ends.

    order selects d^order S / du^order, valid for order 0..3.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    if order == 0:
        out[u >= 1.0] = 1.0
        out[inside] = ui**5 * (126 + ui * (-420 + ui * (540 + ui * (-315 + ui * 70))))
    elif order == 1:
        out[inside] = 630.0 * ui**4 * (1.0 - ui) ** 4
    elif order == 2:
        # 630 * d/du [u^4 (1-u)^4]
        out[inside] = 630.0 * ui**3 * (1.0 - ui) ** 3 * (4.0 - 8.0 * ui)
    elif order == 3:
        # 630 * d^2/du^2 [u^4 (1-u)^4] = 630 * (12u^2 - 80u^3 + 180u^4 - 168u^5 + 56u^6)
        out[inside] = 630.0 * ui**2 * (12 + ui * (-80 + ui * (180 + ui * (-168 + ui * 56))))
    else:
        raise ValueError(f"unsupported window derivative order {order}")
    return out


@dataclass(frozen=True)
class Window:
    """Smooth on/off gate: exactly 0 outside [t_on, t_off], exactly 1 on
    [t_on + tau, t_off - tau], C^4 transitions of width tau.

    Infinite t_on/t_off drop the corresponding transition.
    """

    t_on: float = -np.inf
    t_off: float = np.inf
    tau: float = 0.5

    def eval(self, ts: np.ndarray, order: int) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        rise_const = not np.isfinite(self.t_on)
        fall_const = not np.isfinite(self.t_off)
        if rise_const and fall_const:
            return np.ones_like(ts) if order == 0 else np.zeros_like(ts)

        def rise(k):
            if rise_const:
                return np.ones_like(ts) if k == 0 else np.zeros_like(ts)
            return _smoothstep9((ts - self.t_on) / self.tau, k) / self.tau**k

        def fall(k):
            if fall_const:
                return np.ones_like(ts) if k == 0 else np.zeros_like(ts)
            return _smoothstep9((self.t_off - ts) / self.tau, k) * (-1.0 / self.tau) ** k

        total = np.zeros_like(ts)
        for k in range(order + 1):
            total += _BINOM[order][k] * rise(k) * fall(order - k)
        return total


# ---------------------------------------------------------------------------
# Sinusoid programs.

@dataclass(frozen=True)
class SinusoidAxis:
    """const + sum_j amps[j] * sin(freqs[j] t + phases[j]) on one axis."""

    const: float = 0.0
    amps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    freqs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    phases: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("amps", "freqs", "phases"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if not (self.amps.shape == self.freqs.shape == self.phases.shape):
            raise ValueError("amps/freqs/phases must have matching shapes")

    def eval(self, ts: np.ndarray, order: int) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.full_like(ts, self.const) if order == 0 else np.zeros_like(ts)
        if self.amps.size:
            arg = np.multiply.outer(ts, self.freqs) + self.phases
            coef = self.amps * self.freqs**order
            trig = [np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)][order % 4]
            out = out + trig(arg) @ coef
        return out


@dataclass(frozen=True)
class Signal3:
    """Three SinusoidAxis programs stacked into an R^3-valued signal."""

    x: SinusoidAxis
    y: SinusoidAxis
    z: SinusoidAxis

    @staticmethod
    def constant(v) -> "Signal3":
        v = np.asarray(v, dtype=float)
        return Signal3(*(SinusoidAxis(const=float(c)) for c in v))

    def eval(self, ts: np.ndarray, order: int) -> np.ndarray:
        return np.stack([ax.eval(ts, order) for ax in (self.x, self.y, self.z)], axis=-1)


@dataclass(frozen=True)
class WindowedBlock:
    """signal(t) gated by a smooth window; derivatives by Leibniz."""

    signal: Signal3
    window: Window = field(default_factory=Window)

    def eval(self, ts: np.ndarray, order: int) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.zeros(ts.shape + (3,))
        for k in range(order + 1):
            w = self.window.eval(ts, k)
            if not np.any(w):
                continue
            out += _BINOM[order][k] * w[..., None] * self.signal.eval(ts, order - k)
        return out


class BlockSum:
    """Sum of windowed blocks; the common representation for omega(t) and
    for acceleration programs."""

    def __init__(self, blocks: Sequence[WindowedBlock]):
        self.blocks = tuple(blocks)

    def eval(self, ts, order: int) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.zeros(ts.shape + (3,))
        for b in self.blocks:
            out += b.eval(ts, order)
        return out


# ---------------------------------------------------------------------------
# Translation programs.

class PositionProgram:
    """Closed-form position: T, v, alpha, jerk are successive derivatives."""

    def __init__(self, signal: Signal3):
        self.signal = signal

    def position(self, ts):
        return self.signal.eval(ts, 0)

    def velocity(self, ts):
        return self.signal.eval(ts, 1)

    def acceleration(self, ts):
        return self.signal.eval(ts, 2)

    def jerk(self, ts):
        return self.signal.eval(ts, 3)


class AccelProgram:
    """Translation defined by its acceleration Tddot(t) = sum of windowed
    blocks; position/velocity come from a cached 2-point-Gauss integration
    (global error O(h^4)). Used where exact piecewise control of Tddot is
    needed (free-fall phases, interval walls)."""

    def __init__(self, accel_blocks: Sequence[WindowedBlock], t0=np.zeros(3),
                 v0=np.zeros(3), duration: float = 10.0, cache_dt: float = 1e-3):
        self.blocks = BlockSum(accel_blocks)
        self.duration = float(duration)
        self.h = float(cache_dt)
        self._t0 = np.asarray(t0, dtype=float)
        self._v0 = np.asarray(v0, dtype=float)
        self._grid_T: Optional[np.ndarray] = None
        self._grid_v: Optional[np.ndarray] = None

    def _build(self):
        h = self.h
        n = int(math.ceil(self.duration / h + 1e-9)) + 1
        tk = np.arange(n) * h
        d1 = h * (0.5 - 0.5 / _SQRT3)
        d2 = h * (0.5 + 0.5 / _SQRT3)
        a1 = self.blocks.eval(tk + d1, 0)
        a2 = self.blocks.eval(tk + d2, 0)
        dv = 0.5 * h * (a1 + a2)
        # integral of (h - s) * a(t_k + s) over the step, 2-point Gauss
        dI = 0.5 * h * ((h - d1) * a1 + (h - d2) * a2)
        v = np.vstack([self._v0, self._v0 + np.cumsum(dv, axis=0)])[:n + 1]
        T = np.vstack([
            self._t0,
            self._t0 + np.cumsum(h * v[:-1] + dI, axis=0),
        ])[:n + 1]
        self._grid_v, self._grid_T = v, T

    def _partial(self, tk: np.ndarray, dt: np.ndarray):
        dt = np.maximum(dt, 0.0)
        d1 = dt * (0.5 - 0.5 / _SQRT3)
        d2 = dt * (0.5 + 0.5 / _SQRT3)
        a1 = self.blocks.eval(tk + d1, 0)
        a2 = self.blocks.eval(tk + d2, 0)
        dv = 0.5 * dt[:, None] * (a1 + a2)
        dI = 0.5 * dt[:, None] * ((dt - d1)[:, None] * a1 + (dt - d2)[:, None] * a2)
        return dv, dI

    def _locate(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self._grid_T is None:
            self._build()
        idx = np.clip(np.floor(ts / self.h + 1e-12).astype(int), 0, len(self._grid_T) - 2)
        tk = idx * self.h
        return ts, idx, tk, ts - tk

    def position(self, ts):
        ts, idx, tk, dt = self._locate(ts)
        dv, dI = self._partial(tk, dt)
        return self._grid_T[idx] + dt[:, None] * self._grid_v[idx] + dI

    def velocity(self, ts):
        ts, idx, tk, dt = self._locate(ts)
        dv, _ = self._partial(tk, dt)
        return self._grid_v[idx] + dv

    def acceleration(self, ts):
        return self.blocks.eval(np.asarray(ts, dtype=float), 0)

    def jerk(self, ts):
        return self.blocks.eval(np.asarray(ts, dtype=float), 1)


# ---------------------------------------------------------------------------
# Vectorized quaternion helpers (scalar-first), private to the cache.

def _vq_from_rotvec(v: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(v, axis=-1)
    q = np.empty(v.shape[:-1] + (4,))
    half = 0.5 * angle
    q[..., 0] = np.cos(half)
    small = angle < 1e-12
    scale = np.empty_like(angle)
    nz = ~small
    scale[nz] = np.sin(half[nz]) / angle[nz]
    scale[small] = 0.5
    q[..., 1:] = v * scale[..., None]
    return q


def _vq_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = (q1[..., i] for i in range(4))
    w2, x2, y2, z2 = (q2[..., i] for i in range(4))
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def _vq_to_matrix(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = (q[..., i] for i in range(4))
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def _quat_prefix_scan(dq: np.ndarray) -> np.ndarray:
    """Inclusive left-to-right products C[i] = dq[0] * ... * dq[i].

    Hillis-Steele doubling; associative and order-preserving, so valid for
    the non-commutative quaternion product.
    """
    c = dq.copy()
    n = len(c)
    offset = 1
    while offset < n:
        c[offset:] = _vq_mul(c[:-offset], c[offset:])
        offset *= 2
    return c


class RotationCache:
    """R(t) on a uniform grid via 4th-order Magnus steps.

    Theta_k = (h/2)(w1 + w2) + (sqrt(3) h^2 / 12) w1 x w2 with w1, w2 the
    body rates at the 2-point Gauss nodes of step k.
    """

    def __init__(self, program: BlockSum, r0: np.ndarray, duration: float, h: float):
        self.program = program
        self.h = float(h)
        n = int(math.ceil(duration / h + 1e-9))
        tk = np.arange(n) * h
        w1 = program.eval(tk + h * (0.5 - 0.5 / _SQRT3), 0)
        w2 = program.eval(tk + h * (0.5 + 0.5 / _SQRT3), 0)
        theta = 0.5 * h * (w1 + w2) + (_SQRT3 * h * h / 12.0) * np.cross(w1, w2)
        prods = _quat_prefix_scan(_vq_from_rotvec(theta))
        q0 = quat_from_matrix(np.asarray(r0, dtype=float))
        grid = np.empty((n + 1, 4))
        grid[0] = q0
        grid[1:] = _vq_mul(q0[None, :], prods)
        self.grid = grid / np.linalg.norm(grid, axis=-1, keepdims=True)

    def rotations_at(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx = np.clip(np.floor(ts / self.h + 1e-12).astype(int), 0, len(self.grid) - 1)
        tk = idx * self.h
        dt = np.maximum(ts - tk, 0.0)
        w1 = self.program.eval(tk + dt * (0.5 - 0.5 / _SQRT3), 0)
        w2 = self.program.eval(tk + dt * (0.5 + 0.5 / _SQRT3), 0)
        theta = 0.5 * dt[:, None] * (w1 + w2) + (_SQRT3 / 12.0) * (dt * dt)[:, None] * np.cross(w1, w2)
        return _vq_to_matrix(_vq_mul(self.grid[idx], _vq_from_rotvec(theta)))


# ---------------------------------------------------------------------------
# Kinematics containers.

@dataclass(frozen=True)
class Kinematics:
    """Pointwise motion state with the derivatives the analysis consumes."""

    t: float
    R: np.ndarray
    T: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray
    omega_ddot: np.ndarray
    alpha_dot: np.ndarray

    @property
    def pose(self) -> Pose:
        return Pose(self.R, self.T)


@dataclass(frozen=True)
class KinematicsBatch:
    ts: np.ndarray
    R: np.ndarray
    T: np.ndarray
    v: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    omega_dot: np.ndarray
    omega_ddot: np.ndarray
    alpha_dot: np.ndarray

    def __len__(self):
        return len(self.ts)

    def at(self, i: int) -> Kinematics:
        return Kinematics(
            float(self.ts[i]), self.R[i], self.T[i], self.v[i], self.alpha[i],
            self.omega[i], self.omega_dot[i], self.omega_ddot[i], self.alpha_dot[i],
        )


class AnalyticTrajectory:
    """Body-rate rotation program + translation program over [0, duration].

    cache_dt controls the Magnus grid for R(t); omega and translation
    derivatives are exact closed forms.
    """

    def __init__(self, rate_program: BlockSum, r0, translation,
                 duration: float, cache_dt: float = 1e-4):
        self.rate_program = rate_program
        self.r0 = np.asarray(r0, dtype=float)
        self.translation = translation
        self.duration = float(duration)
        self.cache_dt = float(cache_dt)
        self._cache: Optional[RotationCache] = None

    def _check_range(self, ts: np.ndarray):
        if np.any(ts < -1e-9) or np.any(ts > self.duration + 1e-9):
            raise ValueError(
                f"t outside [0, {self.duration}]: range [{ts.min()}, {ts.max()}]"
            )

    def rotations(self, ts) -> np.ndarray:
        if self._cache is None:
            self._cache = RotationCache(self.rate_program, self.r0, self.duration, self.cache_dt)
        return self._cache.rotations_at(ts)

    def sample_batch(self, ts) -> KinematicsBatch:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self._check_range(ts)
        tc = np.clip(ts, 0.0, self.duration)
        return KinematicsBatch(
            ts=ts,
            R=self.rotations(tc),
            T=self.translation.position(tc),
            v=self.translation.velocity(tc),
            alpha=self.translation.acceleration(tc),
            omega=self.rate_program.eval(tc, 0),
            omega_dot=self.rate_program.eval(tc, 1),
            omega_ddot=self.rate_program.eval(tc, 2),
            alpha_dot=self.translation.jerk(tc),
        )

    def sample_kinematics(self, t: float) -> Kinematics:
        return self.sample_batch(np.array([float(t)])).at(0)

    def pose(self, t: float) -> Pose:
        k = self.sample_kinematics(t)
        return Pose(k.R, k.T)


def sample_kinematics(traj: AnalyticTrajectory, t: float) -> Kinematics:
    """Function-shaped alias for AnalyticTrajectory.sample_kinematics."""
    return traj.sample_kinematics(t)


# ---------------------------------------------------------------------------
# Random circular trajectories.

@dataclass(frozen=True)
class WobbleSpec:
    """Random sinusoidal perturbation riding on the base circle.

    Amplitudes are per-axis totals; frequencies are drawn uniformly from the
    given ranges (rad/s), phases uniformly on the circle.
    """

    rot_amp_rad_s: float = 0.25
    trans_amp_m: float = 0.15
    n_harmonics: int = 2
    rot_freq_range: tuple = (0.8, 2.6)
    trans_freq_range: tuple = (0.6, 2.2)

    def scaled(self, factor: float) -> "WobbleSpec":
        return WobbleSpec(
            self.rot_amp_rad_s * factor,
            self.trans_amp_m * factor,
            self.n_harmonics,
            self.rot_freq_range,
            self.trans_freq_range,
        )


def _look_at_rotation(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Body z-axis toward target; x chosen horizontal when possible."""
    z = target - eye
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-6:
        x = np.cross(np.array([0.0, 1.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def make_circular_trajectory(radius: float, angular_rate: float,
                             wobble: WobbleSpec = WobbleSpec(),
                             seed: int = 0,
                             duration: float = 30.0,
                             target=np.array([0.0, 0.0, -2.5]),
                             cache_dt: float = 1e-3) -> AnalyticTrajectory:
    """Circle of given radius about the origin in the x-y plane, with random
    sinusoidal wobble on both the body rates and the translation; the body
    z-axis starts aimed at `target` and yaws with the circle so a camera near
    the body frame keeps the point cloud in front of it.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if angular_rate == 0:
        raise ValueError("angular_rate must be nonzero")

    rng = np.random.default_rng(seed)
    w = angular_rate

    def wobble_axis(amp: float, freq_range) -> tuple:
        n = wobble.n_harmonics
        if amp == 0.0 or n == 0:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        amps = rng.uniform(0.4, 1.0, n) * (amp / n)
        freqs = rng.uniform(*freq_range, n)
        phases = rng.uniform(0.0, 2.0 * np.pi, n)
        return amps, freqs, phases

    # Translation: circle plus wobble. Circle center at the origin so the
    # pure-circle case has |T| = radius exactly.
    tx = wobble_axis(wobble.trans_amp_m, wobble.trans_freq_range)
    ty = wobble_axis(wobble.trans_amp_m, wobble.trans_freq_range)
    tz = wobble_axis(wobble.trans_amp_m, wobble.trans_freq_range)
    pos = Signal3(
        SinusoidAxis(0.0, np.concatenate([[radius], tx[0]]),
                     np.concatenate([[w], tx[1]]),
                     np.concatenate([[np.pi / 2.0], tx[2]])),
        SinusoidAxis(0.0, np.concatenate([[radius], ty[0]]),
                     np.concatenate([[w], ty[1]]),
                     np.concatenate([[0.0], ty[2]])),
        SinusoidAxis(0.0, *tz),
    )

    # Rotation: constant body rate that yaws the frame with the circle
    # (R(t) = Rz(w t) R0 when wobble is zero), plus 3-axis wobble.
    r0 = _look_at_rotation(np.array([radius, 0.0, 0.0]), np.asarray(target, dtype=float))
    base = r0.T @ np.array([0.0, 0.0, w])
    rx = wobble_axis(wobble.rot_amp_rad_s, wobble.rot_freq_range)
    ry = wobble_axis(wobble.rot_amp_rad_s, wobble.rot_freq_range)
    rz = wobble_axis(wobble.rot_amp_rad_s, wobble.rot_freq_range)
    rates = Signal3(
        SinusoidAxis(base[0], *rx),
        SinusoidAxis(base[1], *ry),
        SinusoidAxis(base[2], *rz),
    )

    return AnalyticTrajectory(
        BlockSum([WindowedBlock(rates)]), r0, PositionProgram(pos),
        duration=duration, cache_dt=cache_dt,
    )


# ---------------------------------------------------------------------------
# Mechanization integration.

@dataclass(frozen=True)
class SampledTrajectory:
    """Uniformly sampled motion states (from integration or resampling)."""

    ts: np.ndarray
    R: np.ndarray
    T: np.ndarray
    v: np.ndarray
    omega: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None

    def __post_init__(self):
        dt = np.diff(self.ts)
        if len(dt) and (dt.min() <= 0 or np.ptp(dt) > 1e-9 * max(dt.max(), 1.0)):
            raise ValueError("timestamps must be strictly increasing and uniform")

    @property
    def dt(self) -> float:
        return float(self.ts[1] - self.ts[0])

    def pose(self, i: int) -> Pose:
        return Pose(self.R[i], self.T[i])


def _check_uniform(ts: np.ndarray) -> float:
    dt = np.diff(ts)
    if len(dt) == 0:
        raise ValueError("need at least two samples")
    if dt.min() <= 0 or np.ptp(dt) > 1e-9 * dt.max():
        raise ValueError("non-uniform timestamps rejected")
    return float(dt.mean())

def _midpoints(f: np.ndarray) -> np.ndarray:
    """Catmull-Rom midpoint values between consecutive samples."""
    n = len(f)
    mid = np.empty((n - 1,) + f.shape[1:])
    if n >= 4:
        mid[1:-1] = (-f[:-3] + 9.0 * f[1:-2] + 9.0 * f[2:-1] - f[3:]) / 16.0
        mid[0] = (3.0 * f[0] + 6.0 * f[1] - f[2]) / 8.0
        mid[-1] = (3.0 * f[-1] + 6.0 * f[-2] - f[-3]) / 8.0
    else:
        mid[:] = 0.5 * (f[:-1] + f[1:])
    return mid


def integrate_mechanization(ts, omega_imu, alpha_imu, omega_bias, alpha_bias,
                            gamma, initial_pose: Pose, initial_velocity,
                            renorm_every: int = 50) -> SampledTrajectory:
    """Integrate Rdot = R hat(w_imu - w_b), Tdot = v, vdot = R(a_imu - a_b) + gamma.

    RK4 with cubic (Catmull-Rom) interpolation of the net input streams, so a
    smooth trajectory is recovered with 4th-order accuracy. dt must be
    uniform and at most 0.01 s.
    """
    ts = np.asarray(ts, dtype=float)
    dt = _check_uniform(ts)
    if dt > 0.01 + 1e-12:
        raise ValueError(f"dt={dt} too coarse; need dt <= 0.01 s")
    gamma = np.asarray(gamma, dtype=float)
    w_net = np.asarray(omega_imu, dtype=float) - np.asarray(omega_bias, dtype=float)
    a_net = np.asarray(alpha_imu, dtype=float) - np.asarray(alpha_bias, dtype=float)
    w_mid = _midpoints(w_net)
    a_mid = _midpoints(a_net)

    n = len(ts)
    R = np.empty((n, 3, 3))
    T = np.empty((n, 3))
    V = np.empty((n, 3))
    R[0] = initial_pose.rotation
    T[0] = initial_pose.translation
    V[0] = np.asarray(initial_velocity, dtype=float)

    for k in range(n - 1):
        r, t, v = R[k], T[k], V[k]
        inputs = ((w_net[k], a_net[k]), (w_mid[k], a_mid[k]),
                  (w_mid[k], a_mid[k]), (w_net[k + 1], a_net[k + 1]))

        def deriv(state, u):
            r_, t_, v_ = state
            w_, a_ = u
            return (r_ @ hat(w_), v_, r_ @ a_ + gamma)

        s0 = (r, t, v)
        k1 = deriv(s0, inputs[0])
        s1 = (r + 0.5 * dt * k1[0], t + 0.5 * dt * k1[1], v + 0.5 * dt * k1[2])
        k2 = deriv(s1, inputs[1])
        s2 = (r + 0.5 * dt * k2[0], t + 0.5 * dt * k2[1], v + 0.5 * dt * k2[2])
        k3 = deriv(s2, inputs[2])
        s3 = (r + dt * k3[0], t + dt * k3[1], v + dt * k3[2])
        k4 = deriv(s3, inputs[3])

        R[k + 1] = r + (dt / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        T[k + 1] = t + (dt / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        V[k + 1] = v + (dt / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        if (k + 1) % renorm_every == 0:
            R[k + 1] = renormalize_rotation(R[k + 1])

    for k in range(n):
        R[k] = renormalize_rotation(R[k])

    alpha = np.einsum("nij,nj->ni", R, a_net) + gamma
    return SampledTrajectory(ts=ts, R=R, T=T, v=V, omega=w_net, alpha=alpha)
