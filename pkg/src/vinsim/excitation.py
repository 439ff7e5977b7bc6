"""Minimum-excitation functionals over sampled 3-vector signals.

For a signal f on an interval I:
    M(f:I) = sup_t ||f(t)||
    m(f:I) = inf_{||x||=1} sup_t |f(t) . x|
    mbar   = sqrt(max{0, 2 m^2 - M^2})

m is approximated from above by a Fibonacci direction lattice plus local
golden-section refinement, and from below by the lattice minimum minus a
Lipschitz correction (|sup_t |f.x| - sup_t |f.y|| <= M * angle(x, y)), so the
true infimum is bracketed. Consumers that divide by m use the lower edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

# Projective covering radius of the direction lattice, measured empirically
# for the construction in fibonacci_half_sphere (worst case over n in
# 2^10..2^16: max angle * sqrt(n) in [2.43, 2.53]) and padded to 3.4, a
# >= 1.34x safety factor.
THETA_COVER_COEFF = 3.4

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_MAX_CHUNK_ELEMS = 2**24


@dataclass(frozen=True)
class SignalWindow:
    """Uniformly sampled R^3-valued signal on [t_start, t_start + (n-1) dt]."""

    values: np.ndarray
    dt: float
    t_start: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 2:
            raise ValueError("signal must be (n >= 2, 3)")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)

    @property
    def t_end(self) -> float:
        return self.t_start + (len(self.values) - 1) * self.dt

    @property
    def interval(self) -> Tuple[float, float]:
        return (self.t_start, self.t_end)


@dataclass(frozen=True)
class ExcitationMin:
    value: float           # refined upper estimate of the infimum
    direction: np.ndarray  # unit argmin direction
    lattice_value: float   # best value on the raw lattice
    lower_bound: float     # lattice value minus Lipschitz cover correction


@dataclass(frozen=True)
class ExcitationReport:
    m: float
    M: float
    m_bar: float
    m_lower: float
    direction: np.ndarray
    interval: Tuple[float, float]

    def __post_init__(self):
        if not (self.M >= self.m >= self.m_bar >= 0.0):
            raise ValueError("excitation ordering M >= m >= mbar >= 0 violated")


def fibonacci_half_sphere(n: int) -> np.ndarray:
    """n well-spread unit directions with z >= 0 (antipodal representatives)."""
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    phi = i * np.pi * (3.0 - math.sqrt(5.0))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    pts[pts[:, 2] < 0.0] *= -1.0
    return pts


def theta_cover(n_directions: int) -> float:
    """Upper bound on the lattice's projective covering radius (rad)."""
    return THETA_COVER_COEFF / math.sqrt(n_directions)


def _sup_abs_dot(values: np.ndarray, x: np.ndarray) -> float:
    return float(np.abs(values @ x).max())


def _lattice_sups(values: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """sup_t |f(t) . d| for each direction, chunked to bound memory."""
    n_t = len(values)
    out = np.empty(len(dirs))
    step = max(8, _MAX_CHUNK_ELEMS // max(n_t, 1))
    for lo in range(0, len(dirs), step):
        hi = min(lo + step, len(dirs))
        out[lo:hi] = np.abs(values @ dirs[lo:hi].T).max(axis=0)
    return out


def _golden_line(fun: Callable[[float], float], lo: float, hi: float,
                 iters: int) -> Tuple[float, float]:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (c, fc) if fc <= fd else (d, fd)


def _sph(theta: float, phi: float) -> np.ndarray:
    s = math.sin(theta)
    return np.array([s * math.cos(phi), s * math.sin(phi), math.cos(theta)])


def excitation_max(window: SignalWindow) -> float:
    """M: largest sample norm."""
    return float(np.linalg.norm(window.values, axis=1).max())


def excitation_min(window: SignalWindow, n_directions: int = 4096,
                   refine_iters: int = 50) -> ExcitationMin:
    """m: directional minimax, bracketed by lattice + refinement.

    The refinement is a best-effort coordinate descent in sphere angles; it
    can only lower the reported value, and the returned lower_bound is valid
    regardless of how well the refinement converges (poles included).
    """
    f = window.values
    dirs = fibonacci_half_sphere(n_directions)
    sups = _lattice_sups(f, dirs)
    best = int(np.argmin(sups))
    lattice_value = float(sups[best])
    x0 = dirs[best]

    theta, phi = math.acos(np.clip(x0[2], -1.0, 1.0)), math.atan2(x0[1], x0[0])
    delta = 2.0 * theta_cover(n_directions)

    def g_angles(th: float, ph: float) -> float:
        return _sup_abs_dot(f, _sph(th, ph))

    # Alternating line searches with shrinking brackets; corner-shaped minima
    # (max of several |f.x| sheets) stall a single theta/phi pass, so the
    # refinement budget is spread over several rounds.
    rounds = 5
    per_line = max(1, refine_iters // (2 * rounds))
    value, direction = lattice_value, x0
    for _ in range(rounds):
        theta, _ = _golden_line(lambda t: g_angles(t, phi),
                                theta - delta, theta + delta, per_line)
        dphi = delta / max(math.sin(theta), 0.1)
        phi, _ = _golden_line(lambda p: g_angles(theta, p),
                              phi - dphi, phi + dphi, per_line)
        v = g_angles(theta, phi)
        if v < value:
            value, direction = v, _sph(theta, phi)
        delta *= 0.5

    big_m = excitation_max(window)
    lower = max(0.0, lattice_value - big_m * theta_cover(n_directions))
    return ExcitationMin(value=value, direction=direction,
                         lattice_value=lattice_value, lower_bound=lower)


def excitation_bar(window: SignalWindow, n_directions: int = 4096,
                   refine_iters: int = 50) -> float:
    """mbar = sqrt(max{0, 2 m^2 - M^2})."""
    m = excitation_min(window, n_directions, refine_iters).value
    big_m = excitation_max(window)
    return math.sqrt(max(0.0, 2.0 * m * m - big_m * big_m))


def evaluate_excitation(window: SignalWindow, n_directions: int = 4096,
                        refine_iters: int = 50) -> ExcitationReport:
    big_m = excitation_max(window)
    emin = excitation_min(window, n_directions, refine_iters)
    m = min(emin.value, big_m)
    m_bar = math.sqrt(max(0.0, 2.0 * m * m - big_m * big_m))
    return ExcitationReport(m=m, M=big_m, m_bar=m_bar,
                            m_lower=emin.lower_bound,
                            direction=emin.direction,
                            interval=window.interval)
