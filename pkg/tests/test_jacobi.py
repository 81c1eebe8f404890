import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gmpflow.errors import (
    NumericalError,
    SingularMatrixError,
    SpectrumProximityError,
    ValidationError,
    WindowError,
)
from gmpflow.jacobi import (
    DiscreteMeasure,
    JacobiWindow,
    KappaVector,
    decay_margin,
    dist_eta,
    dist_eta_windows,
    extension_predicate,
    kappa,
    kappa_pairing,
    lanczos_from_measure,
    resolvent_r,
    shifted_dist_eta,
    spectral_measure_plus,
    two_by_two_resolvent,
)


def free_window(n_min: int, n_max: int) -> JacobiWindow:
    size = n_max - n_min + 1
    return JacobiWindow(np.ones(size), np.zeros(size), n_min)


def random_window(
    rng: np.random.Generator, n_min: int, n_max: int
) -> JacobiWindow:
    size = n_max - n_min + 1
    return JacobiWindow(
        rng.uniform(0.5, 1.5, size), rng.uniform(-0.5, 0.5, size), n_min
    )


FREE_R3 = (-3.0 + np.sqrt(5.0)) / 2.0


class TestJacobiWindow:
    def test_indexing_and_dense(self):
        win = JacobiWindow(
            np.array([9.0, 2.0, 3.0]), np.array([1.0, -1.0, 0.5]), -1
        )
        assert win.n_max == 1
        assert win.a_at(0) == 2.0
        assert win.b_at(-1) == 1.0
        dense = win.dense()
        assert_allclose(
            dense, [[1.0, 2.0, 0.0], [2.0, -1.0, 3.0], [0.0, 3.0, 0.5]]
        )

    def test_halves(self):
        win = JacobiWindow(
            np.array([0.7, 0.9, 1.1, 1.3]),
            np.array([10.0, 20.0, 30.0, 40.0]),
            -2,
        )
        right = win.right_half()
        assert right.n_min == 0
        assert_allclose(right.b, [30.0, 40.0])
        assert_allclose(right.a, [1.1, 1.3])
        left = win.left_half()
        assert left.n_min == 0
        assert_allclose(left.b, [20.0, 10.0])
        assert_allclose(left.a, [1.1, 0.9])

    def test_validation(self):
        with pytest.raises(ValidationError):
            JacobiWindow(np.array([0.0, 1.0]), np.zeros(2))
        with pytest.raises(ValidationError):
            JacobiWindow(np.ones(3), np.zeros(2))

    def test_json_round_trip(self):
        win = JacobiWindow(np.array([1.5, 0.5]), np.array([0.1, -0.2]), -1)
        back = JacobiWindow.from_json(win.to_json())
        assert back.n_min == -1
        assert_allclose(back.a, win.a)
        assert_allclose(back.b, win.b)


class TestDiscreteMeasure:
    def test_validation(self):
        with pytest.raises(ValidationError):
            DiscreteMeasure(np.array([0.0, 0.0]), np.array([0.5, 0.5]))
        with pytest.raises(ValidationError):
            DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.6]))
        with pytest.raises(ValidationError):
            DiscreteMeasure(np.array([0.0, 1.0]), np.array([-0.1, 1.1]))

    def test_moments(self):
        m = DiscreteMeasure(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        assert m.moment(0) == 1.0
        assert m.moment(1) == 0.0
        assert m.moment(2) == 1.0


class TestSpectralMeasurePlus:
    def test_single_site(self):
        win = JacobiWindow(np.array([1.0]), np.array([0.7]))
        m = spectral_measure_plus(win)
        assert_allclose(m.points, [0.7])
        assert_allclose(m.weights, [1.0])

    def test_free_truncation_support(self):
        m = spectral_measure_plus(free_window(0, 199))
        assert m.n_points == 200
        assert np.all(np.abs(m.points) < 2.0)
        expected = 2.0 * np.cos(np.arange(200, 0, -1) * np.pi / 201.0)
        assert_allclose(m.points, expected, atol=1e-12)

    def test_first_moment_is_b0(self):
        rng = np.random.default_rng(31)
        for _ in range(10)            :
            win = random_window(rng, 0, 12)
            m = spectral_measure_plus(win)
            assert_allclose(m.moment(1), win.b_at(0), atol=1e-12)

    def test_rejects_two_sided(self):
        with pytest.raises(WindowError):
            spectral_measure_plus(free_window(-3, 3))


class TestResolventR:
    def test_single_site(self):
        win = JacobiWindow(np.array([1.0]), np.array([0.0]))
        assert_allclose(resolvent_r(win, 2.0), -0.5)

    def test_free_value_at_three(self):
        win = free_window(0, 1999)
        assert_allclose(resolvent_r(win, 3.0), FREE_R3, atol=1e-10)

    def test_matches_measure_form(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            win = random_window(rng, 0, 15)
            m = spectral_measure_plus(win)
            z = float(np.max(m.points)) + rng.uniform(0.5, 2.0)
            assert_allclose(
                resolvent_r(win, z), m.cauchy_transform(z).real, atol=1e-10
            )

    def test_herglotz(self):
        rng = np.random.default_rng(41)
        win = random_window(rng, 0, 20)
        for _ in range(10):
            z = complex(rng.uniform(-2, 2), rng.uniform(0.2, 2.0))
            assert resolvent_r(win, z).imag > 0.0

    def test_eigenvalue_rejected(self):
        win = JacobiWindow(np.array([1.0]), np.array([0.7]))
        with pytest.raises(SingularMatrixError):
            resolvent_r(win, 0.7)


class TestLanczosFromMeasure:
    def test_two_symmetric_points(self):
        m = DiscreteMeasure(np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        win = lanczos_from_measure(m, 1)
        assert_allclose(win.b, [0.0, 0.0], atol=1e-15)
        assert_allclose(win.a_at(1), 1.0, atol=1e-15)

    def test_free_round_trip(self):
        m = spectral_measure_plus(free_window(0, 120))
        win = lanczos_from_measure(m, 25)
        assert_allclose(win.b, np.zeros(26), atol=1e-8)
        assert_allclose(win.a[1:], np.ones(25), atol=1e-8)

    def test_single_point(self):
        m = DiscreteMeasure(np.array([0.0]), np.array([1.0]))
        win = lanczos_from_measure(m, 0)
        assert win.size == 1
        assert_allclose(win.b, [0.0])
        with pytest.raises(ValidationError):
            lanczos_from_measure(m, 1)

    def test_moment_reconstruction(self):
        rng = np.random.default_rng(43)
        pts = np.sort(rng.uniform(-2.0, 2.0, size=30))
        while np.min(np.diff(pts)) < 1e-3:
            pts = np.sort(rng.uniform(-2.0, 2.0, size=30))
        w = rng.uniform(0.1, 1.0, size=30)
        m = DiscreteMeasure(pts, w / np.sum(w))
        depth = 8
        win = lanczos_from_measure(m, depth)
        back = spectral_measure_plus(win)
        for order in range(2 * depth + 1):
            assert_allclose(
                back.moment(order), m.moment(order), atol=1e-9, rtol=1e-9
            )


class TestKappa:
    def test_free_angle_and_norm(self):
        win = free_window(-80, 80)
        kap = kappa(win, 3.0)
        assert_allclose(kap.phi, math.atan(FREE_R3), atol=1e-9)
        r_prime = (-1.0 + 3.0 / np.sqrt(5.0)) / 2.0
        phi_prime = r_prime / (1.0 + FREE_R3**2)
        assert_allclose(kap.norm_sq, phi_prime, atol=1e-6)

    def test_supported_on_right_half(self):
        win = free_window(-80, 80)
        kap = kappa(win, 3.0)
        left = kap.vec[: win.pos(0)]
        assert np.max(np.abs(left)) < 1e-9

    def test_zero_angle_branch(self):
        rng = np.random.default_rng(47)
        win = random_window(rng, -75, 75)
        c = float(np.max(np.abs(win.dense()).sum(axis=1))) + 1.0
        kap = kappa(win, c)
        r_plus = resolvent_r(win.right_half(), c)
        assert_allclose(kap.phi, math.atan(r_plus), atol=1e-12)

    def test_norm_bound_estimate(self):
        win = free_window(-80, 80)
        c = 3.0
        kap = kappa(win, c)
        h = 1e-5
        phi_prime = (
            kappa(win, c + h).phi - kappa(win, c - h).phi
        ) / (2.0 * h)
        norm_j = win.norm_bound()
        dist = 1.0
        lower = min(win.a_at(0) ** 2, 1.0) / (abs(c) + norm_j) ** 2
        upper = max(win.a_at(0) ** 2, 1.0) / dist**2
        assert lower <= phi_prime <= upper
        assert_allclose(kap.norm_sq, phi_prime, atol=1e-6)

    def test_proximity_rejected(self):
        win = free_window(-40, 40)
        with pytest.raises(SpectrumProximityError):
            kappa(win, 0.0)

    def test_margin_enforced(self):
        win = free_window(-5, 5)
        with pytest.raises(WindowError):
            kappa(win, 3.0)


class TestKappaPairing:
    def test_identical_windows(self):
        win = free_window(-80, 80)
        lhs, rhs = kappa_pairing(win, win, 3.0)
        assert rhs == 0.0
        assert abs(lhs) < 1e-12

    def test_single_site_bump(self):
        win = free_window(-80, 80)
        b = win.b.copy()
        b[win.pos(0)] += 0.1
        other = JacobiWindow(win.a, b, win.n_min)
        lhs, rhs = kappa_pairing(win, other, 3.0)
        assert abs(lhs - rhs) < 1e-8
        assert abs(rhs) > 1e-4

    def test_antisymmetry(self):
        rng = np.random.default_rng(53)
        win = free_window(-100, 100)
        a = win.a.copy()
        b = win.b.copy()
        center = win.pos(0)
        b[center - 2 : center + 3] += rng.uniform(-0.1, 0.1, 5)
        a[center - 2 : center + 3] *= 1.0 + rng.uniform(-0.05, 0.05, 5)
        other = JacobiWindow(a, b, win.n_min)
        lhs1, rhs1 = kappa_pairing(win, other, 3.0)
        lhs2, rhs2 = kappa_pairing(other, win, 3.0)
        assert_allclose(lhs1, -lhs2, atol=1e-8)
        assert_allclose(rhs1, -rhs2, atol=1e-12)
        assert abs(lhs1 - rhs1) < 1e-8


class TestTwoByTwoResolvent:
    def test_free_corner_value(self):
        win = free_window(-300, 300)
        rmat = two_by_two_resolvent(win, 3.0)
        assert_allclose(rmat[1, 1], -1.0 / np.sqrt(5.0), atol=1e-9)
        assert_allclose(rmat[0, 0], rmat[1, 1], atol=1e-9)
        assert_allclose(rmat[0, 1], rmat[1, 0], atol=1e-12)

    def test_identity_on_random_windows(self):
        rng = np.random.default_rng(59)
        for _ in range(50):
            win = random_window(rng, -25, 24)
            z = float(np.max(np.abs(np.linalg.eigvalsh(win.dense())))) + 1.0
            rmat = two_by_two_resolvent(win, z)
            r_plus = resolvent_r(win.right_half(), z)
            r_minus = resolvent_r(win.left_half(), z)
            a0 = win.a_at(0)
            assert (
                abs(-1.0 / rmat[1, 1] - (-1.0 / r_plus + a0**2 * r_minus))
                < 1e-8
            )
            assert (
                abs(-1.0 / rmat[0, 0] - (-1.0 / r_minus + a0**2 * r_plus))
                < 1e-8
            )

    def test_proximity_rejected(self):
        win = free_window(-30, 30)
        with pytest.raises(SpectrumProximityError):
            two_by_two_resolvent(win, 0.0)


class TestExtensionPredicate:
    def test_truth_table(self):
        inf = float("inf")
        fin = 0.7
        assert extension_predicate(inf, fin)
        assert extension_predicate(fin, inf)
        assert extension_predicate(0.0, fin)
        assert extension_predicate(fin, 0.0)
        assert extension_predicate(0.0, 0.0)
        assert not extension_predicate(inf, inf)
        assert not extension_predicate(inf, 0.0)
        assert not extension_predicate(0.0, inf)
        assert not extension_predicate(fin, 0.3)

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            extension_predicate(float("nan"), 0.0)


class TestDistEta:
    def test_identical(self):
        b = np.array([0.1, 0.2, 0.3])
        assert dist_eta(b, b, 0.5) == 0.0

    def test_single_site_difference(self):
        b = np.zeros(5)
        b_tilde = np.zeros(5)
        b_tilde[0] = -1.0
        assert_allclose(dist_eta(b, b_tilde, 0.5), 1.0)

    def test_geometric_difference(self):
        eta = 0.6
        n = 400
        b = eta ** np.arange(n)
        expected = 1.0 / np.sqrt(1.0 - eta**4)
        assert_allclose(dist_eta(b, np.zeros(n), eta), expected, rtol=1e-12)

    def test_unequal_lengths_zero_padded(self):
        assert_allclose(
            dist_eta(np.array([1.0, 1.0]), np.array([1.0]), 0.5), 0.5
        )

    def test_eta_range_enforced(self):
        with pytest.raises(ValidationError):
            dist_eta(np.zeros(2), np.zeros(2), 1.0)

    def test_window_combination(self):
        j1 = JacobiWindow(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        j2 = JacobiWindow(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert_allclose(dist_eta_windows(j1, j2, 0.5), 1.0)

    def test_shifted_profile(self):
        size = 30
        b = np.zeros(size)
        b[0] = 1.0
        win = JacobiWindow(np.ones(size), b)
        ref = JacobiWindow(np.ones(size), np.zeros(size))
        profile = shifted_dist_eta(win, ref, 0.5, 3)
        assert profile.shape == (4,)
        assert_allclose(profile[0], 1.0, rtol=1e-12)
        assert np.max(profile[1:]) < 1e-8


class TestDecayMargin:
    def test_monotone_in_distance(self):
        win = free_window(-10, 10)
        m_near = decay_margin(win, 0.1)
        m_far = decay_margin(win, 2.0)
        assert m_near > m_far > 0
