"""Minimum-excitation functionals: oracles and converse-lemma properties."""

import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from vinsim.excitation import (
    ExcitationReport, SignalWindow, evaluate_excitation, excitation_bar,
    excitation_max, excitation_min, fibonacci_half_sphere, theta_cover,
)
from vinsim.geometry import exp_rot, spectral_norm


def _dense_sphere(n=8000, radius=1.0):
    i = np.arange(n)
    z = 1.0 - (2 * i + 1.0) / n
    phi = i * np.pi * (3.0 - math.sqrt(5.0))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return radius * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _random_signal(rng, n=400, duration=10.0, n_terms=3):
    t = np.linspace(0.0, duration, n)
    cols = []
    for _ in range(3):
        col = np.zeros(n)
        for _ in range(n_terms):
            col += rng.normal(0, 1) * np.sin(rng.uniform(0.3, 3.0) * t + rng.uniform(0, 2 * np.pi))
        cols.append(col)
    return SignalWindow(np.stack(cols, axis=-1), dt=duration / (n - 1))


def _exact_discrete_min(values: np.ndarray) -> float:
    """Exact inf_x sup_t |f(t).x| over the sample set: the support function
    of conv{+-f_k} is x -> sup_t |f(t).x|, so the minimum over unit x is the
    inradius of that symmetric hull (min facet offset)."""
    sym = np.vstack([values, -values])
    if np.linalg.matrix_rank(sym, tol=1e-12) < 3:
        return 0.0
    hull = ConvexHull(sym)
    return float((-hull.equations[:, 3]).min())


class TestSignalWindow:
    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            SignalWindow(np.zeros((1, 3)), dt=0.1)

    def test_needs_positive_dt(self):
        with pytest.raises(ValueError):
            SignalWindow(np.zeros((5, 3)), dt=0.0)

    def test_interval(self):
        w = SignalWindow(np.zeros((11, 3)), dt=0.1, t_start=2.0)
        assert w.interval == (2.0, pytest.approx(3.0))


class TestExcitationMax:
    def test_constant(self):
        w = SignalWindow(np.tile([3.0, 0.0, 0.0], (10, 1)), dt=0.1)
        assert excitation_max(w) == pytest.approx(3.0)

    def test_unit_circle(self):
        t = np.linspace(0, 2 * np.pi, 500)
        w = SignalWindow(np.stack([np.cos(t), np.sin(t), np.zeros_like(t)], -1), dt=t[1])
        assert excitation_max(w) == pytest.approx(1.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        w = _random_signal(rng)
        brute = max(np.sqrt(v @ v) for v in w.values)
        assert excitation_max(w) == pytest.approx(brute, rel=1e-12)


class TestExcitationMin:
    def test_constant_signal_is_zero(self):
        w = SignalWindow(np.tile([1.0, 0.0, 0.0], (10, 1)), dt=0.1)
        r = excitation_min(w)
        assert r.value < 1e-4
        # argmin direction is orthogonal to the signal
        assert abs(r.direction @ [1.0, 0.0, 0.0]) < 1e-3

    def test_axis_sweep(self):
        w = SignalWindow(np.eye(3), dt=1.0)
        r = excitation_min(w)
        assert r.value == pytest.approx(1.0 / math.sqrt(3.0), abs=1e-3)

    def test_dense_sphere(self):
        for radius in (1.0, 0.3):
            w = SignalWindow(_dense_sphere(radius=radius), dt=1.0)
            r = excitation_min(w)
            assert r.value == pytest.approx(radius, abs=1e-3)

    def test_bracketed_by_exact_hull_inradius(self):
        # lower envelope <= exact discrete inf <= refined value, and the
        # refined value stays within the Lipschitz cover of the exact one
        rng = np.random.default_rng(1)
        for _ in range(30):
            w = _random_signal(rng)
            exact = _exact_discrete_min(w.values)
            r = excitation_min(w, n_directions=4096)
            big_m = excitation_max(w)
            assert r.lower_bound <= exact + 1e-12
            assert r.value >= exact - 1e-9
            assert r.value <= exact + big_m * theta_cover(4096) + 1e-12

    def test_lattice_envelope_nonnegative(self):
        rng = np.random.default_rng(2)
        w = _random_signal(rng)
        r = excitation_min(w)
        assert 0.0 <= r.lower_bound <= r.lattice_value


class TestExcitationBar:
    def test_constant_is_zero(self):
        w = SignalWindow(np.tile([2.0, 0.0, 0.0], (10, 1)), dt=0.1)
        assert excitation_bar(w) == 0.0

    def test_dense_sphere_equals_radius(self):
        w = SignalWindow(_dense_sphere(radius=0.7), dt=1.0)
        assert excitation_bar(w) == pytest.approx(0.7, abs=2e-3)

    def test_axis_sweep_clamps_to_zero(self):
        w = SignalWindow(np.eye(3), dt=1.0)
        # 2 m^2 - M^2 = 2/3 - 1 < 0
        assert excitation_bar(w) == 0.0


class TestReportAndProperties:
    def test_ordering_on_random_inputs(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            rep = evaluate_excitation(_random_signal(rng, n=200))
            assert rep.M >= rep.m >= rep.m_bar >= 0.0
            assert rep.m >= rep.m_lower >= 0.0

    def test_report_rejects_bad_ordering(self):
        with pytest.raises(ValueError):
            ExcitationReport(m=2.0, M=1.0, m_bar=0.0, m_lower=0.0,
                             direction=np.array([1.0, 0, 0]), interval=(0, 1))

    def test_scaling(self):
        rng = np.random.default_rng(4)
        w = _random_signal(rng)
        for c in (2.5, 0.1, -3.0):
            ws = SignalWindow(c * w.values, dt=w.dt)
            assert excitation_max(ws) == pytest.approx(abs(c) * excitation_max(w), rel=1e-9)
            m0 = excitation_min(w).value
            ms = excitation_min(ws).value
            assert ms == pytest.approx(abs(c) * m0, rel=1e-6)
            assert excitation_bar(ws) == pytest.approx(abs(c) * excitation_bar(w), rel=1e-6, abs=1e-12)

    def test_converse_lemma_general_orthogonal(self):
        # A = c1 I + c2 R: sup_t ||A f(t)|| >= ||A|| mbar(f), with mbar from
        # the exact discrete minimum so the inequality is tight and safe
        rng = np.random.default_rng(5)
        for _ in range(200):
            w = _random_signal(rng, n=150, n_terms=2)
            c1, c2 = rng.normal(0, 1, 2)
            r = exp_rot(rng.normal(0, 1, 3))
            a = c1 * np.eye(3) + c2 * r
            sup = np.linalg.norm(w.values @ a.T, axis=1).max()
            m_exact = _exact_discrete_min(w.values)
            big_m = excitation_max(w)
            mbar = math.sqrt(max(0.0, 2.0 * m_exact**2 - big_m**2))
            assert sup >= spectral_norm(a) * mbar - 1e-9

    def test_converse_lemma_i_minus_r(self):
        # A = I - R: sup_t ||A f(t)|| >= ||A|| m(f), exact discretely
        rng = np.random.default_rng(6)
        for _ in range(200):
            w = _random_signal(rng, n=150, n_terms=2)
            r = exp_rot(rng.normal(0, 1, 3))
            a = np.eye(3) - r
            sup = np.linalg.norm(w.values @ a.T, axis=1).max()
            m_exact = _exact_discrete_min(w.values)
            assert sup >= spectral_norm(a) * m_exact - 1e-9

    def test_converse_lemmas_with_computed_envelope(self):
        # the same inequalities must hold with the computed lower envelope,
        # with zero tolerance, since lower_bound <= exact inf
        rng = np.random.default_rng(7)
        for _ in range(50):
            w = _random_signal(rng, n=150, n_terms=2)
            r = exp_rot(rng.normal(0, 1, 3))
            emin = excitation_min(w)
            a = np.eye(3) - r
            sup = np.linalg.norm(w.values @ a.T, axis=1).max()
            assert sup >= spectral_norm(a) * emin.lower_bound


class TestLattice:
    def test_half_sphere(self):
        d = fibonacci_half_sphere(512)
        assert np.all(d[:, 2] >= 0.0)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)

    def test_cover_formula_monotone(self):
        assert theta_cover(4096) < theta_cover(1024)
