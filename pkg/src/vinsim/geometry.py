"""Rigid-body primitives: rotations, poses, twists, and scaled rigid motions.

Rotations are kept as 3x3 matrices throughout. All matrix norms used by the
sensitivity analysis are spectral norms (largest singular value).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Orthogonality drift beyond this triggers polar re-projection.
ORTHO_TOL = 1e-9

# log_rot rejects angles this close to pi (ambiguous branch).
LOG_ROT_ANGLE_LIMIT = np.pi - 1e-6


def hat(v) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector: hat(v) @ x == cross(v, x)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m) -> np.ndarray:
    """Inverse of hat for a skew-symmetric matrix."""
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_rot(v) -> np.ndarray:
    """Rotation matrix with axis v/|v| and angle |v| (Rodrigues)."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        # Second-order series keeps the result exactly orthogonal to machine
        # precision for tiny angles without dividing by ~0.
        k = hat(v)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = v / angle
    k = hat(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def log_rot(r) -> np.ndarray:
    """Rotation vector of R; defined for rotation angle < pi."""
    r = np.asarray(r, dtype=float)
    cos_angle = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle >= LOG_ROT_ANGLE_LIMIT:
        raise ValueError(f"rotation angle {angle:.6f} too close to pi for log_rot")
    if angle < 1e-7:
        # R ~ I + hat(v): antisymmetric part recovers v to O(angle^3).
        return vee(0.5 * (r - r.T))
    return vee((angle / (2.0 * np.sin(angle))) * (r - r.T))


def project_to_rotation(m) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar factor via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def renormalize_rotation(r) -> np.ndarray:
    """Re-orthonormalize only when drift exceeds ORTHO_TOL."""
    r = np.asarray(r, dtype=float)
    if spectral_norm(r @ r.T - np.eye(3)) > ORTHO_TOL:
        return project_to_rotation(r)
    return r


def is_rotation(r, tol: float = 1e-12) -> bool:
    r = np.asarray(r, dtype=float)
    return (
        r.shape == (3, 3)
        and spectral_norm(r @ r.T - np.eye(3)) <= tol
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def spectral_norm(m) -> float:
    """Largest singular value; the matrix norm used in every bound formula."""
    return float(np.linalg.norm(np.asarray(m, dtype=float), ord=2))


def rotation_angle(r) -> float:
    """Angle of a rotation matrix in [0, pi].

    atan2 of (|antisymmetric part|, trace) keeps full precision near the
    identity, where the arccos form loses half the digits.
    """
    r = np.asarray(r)
    s = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(np.linalg.norm(s), (np.trace(r) - 1.0) / 2.0))


@dataclass(frozen=True)
class Pose:
    """Rigid motion g = (R, T) acting as x -> R x + T."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 representation."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class Twist:
    """Generalized velocity (omega, v)."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))


@dataclass(frozen=True)
class ScaledPose:
    """Scaled rigid motion: pose (R, T) with translation scaled by sigma.

    Acts as x -> R x + sigma T; equivalently the pose (R, sigma T).
    """

    pose: Pose
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def as_pose(self) -> Pose:
        return Pose(self.pose.rotation, self.scale * self.pose.translation)


def compose(g1: Pose, g2: Pose) -> Pose:
    """g1 then g2 applied to points: compose(g1, g2)(x) = g1(g2(x))."""
    return Pose(
        g1.rotation @ g2.rotation,
        g1.rotation @ g2.translation + g1.translation,
    )


def invert(g: Pose) -> Pose:
    rt = g.rotation.T
    return Pose(rt, -rt @ g.translation)


def act(g: Pose, x) -> np.ndarray:
    """Apply g to one point or to an (n, 3) array of points."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return g.rotation @ x + g.translation
    return x @ g.rotation.T + g.translation


def scale_pose(g: Pose, sigma: float) -> Pose:
    """(R, T) -> (R, sigma T); the scaled rigid motion as a plain pose."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return Pose(g.rotation, sigma * g.translation)


def poses_close(g1: Pose, g2: Pose, tol: float = 1e-12) -> bool:
    return (
        spectral_norm(g1.rotation - g2.rotation) <= tol
        and np.linalg.norm(g1.translation - g2.translation) <= tol
    )


# ---------------------------------------------------------------------------
# Quaternion helpers. Internal to the rotation-cache integrator; scalar-first
# convention q = (w, x, y, z).

def quat_from_rotvec(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        half = 0.5 * v
        q = np.array([1.0 - angle * angle / 8.0, half[0], half[1], half[2]])
        return q / np.linalg.norm(q)
    axis = v / angle
    s = np.sin(angle / 2.0)
    return np.array([np.cos(angle / 2.0), s * axis[0], s * axis[1], s * axis[2]])


def quat_multiply(q1, q2) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (r[2, 1] - r[1, 2]) / s,
            (r[0, 2] - r[2, 0]) / s,
            (r[1, 0] - r[0, 1]) / s,
        ])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return q / np.linalg.norm(q)
