"""Measure operations: frozen examples plus metric/divergence properties."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfcontrol.measures import (
    DEFAULT_Q,
    EmpiricalMeasure,
    entropy_h,
    measure_from_csv,
    measure_to_csv,
    relative_entropy,
    second_moment,
    wasserstein1,
    wasserstein2,
)


def brute_force_wp(xs: np.ndarray, ys: np.ndarray, p: int) -> float:
    """Independent oracle: exhaustive minimum over permutation couplings
    of two equal-size uniform supports."""
    n = len(xs)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        cost = sum(np.sqrt(np.sum((xs[i] - ys[perm[i]]) ** 2)) ** p for i in range(n)) / n
        best = min(best, cost)
    return best ** (1.0 / p)


def random_measure(gen, max_atoms=5, d=1, weighted=False):
    n = int(gen.integers(1, max_atoms + 1))
    pts = 2.0 * gen.standard_normal((n, d))
    if weighted:
        w = gen.random(n) + 0.05
        return EmpiricalMeasure(pts, w / w.sum())
    return EmpiricalMeasure(pts)


class TestSecondMoment:
    def test_dirac_at_zero(self):
        assert second_moment(EmpiricalMeasure.dirac([0.0])) == 0.0

    def test_symmetric_pair(self):
        mu = EmpiricalMeasure.from_points([[1.0], [-1.0]])
        assert second_moment(mu) == pytest.approx(1.0)

    def test_hand_evaluated_sum(self):
        # (0.5*9 + 0.5*16)^(1/2) = sqrt(12.5)
        mu = EmpiricalMeasure.from_points([[3.0], [4.0]])
        assert second_moment(mu) == pytest.approx(math.sqrt(12.5), abs=1e-12)


class TestWasserstein:
    def test_identity_of_indiscernibles(self):
        mu = EmpiricalMeasure.from_points([[0.3], [1.2], [-0.7]])
        assert wasserstein2(mu, mu) == 0.0
        assert wasserstein1(mu, mu) == 0.0

    def test_diracs(self):
        a, b = EmpiricalMeasure.dirac([1.0, 2.0]), EmpiricalMeasure.dirac([4.0, 6.0])
        assert wasserstein2(a, b) == pytest.approx(5.0)
        assert wasserstein1(a, b) == pytest.approx(5.0)

    def test_two_point_brute_force_value(self):
        # permutation couplings give min(0.25, 1.25)^(1/2) = 0.5
        a = EmpiricalMeasure.from_points([[0.0], [1.0]])
        b = EmpiricalMeasure.from_points([[0.5], [1.5]])
        assert wasserstein2(a, b) == pytest.approx(0.5, abs=1e-12)

    def test_w1_sorted_coupling_value(self):
        # sorted coupling cost (1 + 1)/2 = 1
        a = EmpiricalMeasure.from_points([[0.0], [2.0]])
        b = EmpiricalMeasure.from_points([[1.0], [1.0]])
        assert wasserstein1(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            wasserstein2(EmpiricalMeasure.dirac([0.0]),
                         EmpiricalMeasure.dirac([0.0, 0.0]))

    @pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
    def test_sorted_quantile_matches_brute_force_1d(self, n):
        gen = np.random.default_rng(100 + n)
        for _ in range(5):
            xs = gen.standard_normal((n, 1))
            ys = gen.standard_normal((n, 1))
            a, b = EmpiricalMeasure(xs), EmpiricalMeasure(ys)
            assert wasserstein2(a, b) == pytest.approx(brute_force_wp(xs, ys, 2), abs=1e-10)
            assert wasserstein1(a, b) == pytest.approx(brute_force_wp(xs, ys, 1), abs=1e-10)

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_assignment_matches_brute_force_2d(self, n):
        gen = np.random.default_rng(200 + n)
        xs = gen.standard_normal((n, 2))
        ys = gen.standard_normal((n, 2))
        a, b = EmpiricalMeasure(xs), EmpiricalMeasure(ys)
        assert wasserstein2(a, b) == pytest.approx(brute_force_wp(xs, ys, 2), abs=1e-9)

    def test_lp_handles_general_weights(self):
        a = EmpiricalMeasure(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.25, 0.75]))
        b = EmpiricalMeasure(np.array([[0.0, 1.0]]), np.array([1.0]))
        # every atom moves straight to the single target atom
        expected = math.sqrt(0.25 * 1.0 + 0.75 * 2.0)
        assert wasserstein2(a, b) == pytest.approx(expected, abs=1e-7)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_metric_axioms_on_random_triples(self, seed):
        gen = np.random.default_rng(seed)
        d = int(gen.integers(1, 3))
        mus = [random_measure(gen, d=d, weighted=bool(gen.integers(2))) for _ in range(3)]
        for dist in (wasserstein1, wasserstein2):
            dab, dba = dist(mus[0], mus[1]), dist(mus[1], mus[0])
            assert dab == pytest.approx(dba, abs=1e-9)  # symmetry
            dac, dbc = dist(mus[0], mus[2]), dist(mus[1], mus[2])
            assert dac <= dab + dbc + 1e-9  # triangle inequality

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_w1_below_w2(self, seed):
        gen = np.random.default_rng(seed)
        a = random_measure(gen, weighted=True)
        b = random_measure(gen, weighted=True)
        assert wasserstein1(a, b) <= wasserstein2(a, b) + 1e-9


class TestAssignmentGuard:
    def test_exact_assignment_refuses_oversized_uniform_clouds(self):
        gen = np.random.default_rng(0)
        big_a = EmpiricalMeasure(gen.standard_normal((2049, 2)))
        big_b = EmpiricalMeasure(gen.standard_normal((2049, 2)))
        with pytest.raises(ValueError, match="2048"):
            wasserstein2(big_a, big_b)


class TestRelativeEntropy:
    def nu_hat(self, t=0.25):
        return EmpiricalMeasure(np.array([[1 - t], [t - 1]]), np.array([0.5, 0.5]))

    def test_equal_measures_vanish(self):
        nu = self.nu_hat()
        assert relative_entropy(nu, nu) == pytest.approx(0.0, abs=1e-14)

    def test_single_atom_gives_log_two(self):
        # (h(2) + h(0))/2 with h(2) = 2 ln 2 - 1 and h(0) = 1
        nu = self.nu_hat()
        mu = EmpiricalMeasure.dirac([0.75])
        assert relative_entropy(mu, nu) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_atom_off_support_triggers_sentinel(self):
        nu = self.nu_hat()
        mu = EmpiricalMeasure.dirac([0.3])
        assert relative_entropy(mu, nu) == DEFAULT_Q
        assert relative_entropy(mu, nu, Q=123.0) == 123.0

    def test_support_matching_tolerates_float_noise(self):
        nu = self.nu_hat()
        mu = EmpiricalMeasure.dirac([0.75 + 3e-10])
        assert relative_entropy(mu, nu) == pytest.approx(math.log(2.0), abs=1e-6)

    def test_h_kernel_values(self):
        assert entropy_h(1.0) == pytest.approx(0.0)
        assert entropy_h(0.0) == pytest.approx(1.0)
        assert entropy_h(2.0) == pytest.approx(2 * math.log(2.0) - 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_with_equality_iff_equal(self, seed):
        gen = np.random.default_rng(seed)
        n = int(gen.integers(2, 6))
        pts = np.sort(gen.standard_normal(n))[:, None]
        wnu = gen.random(n) + 0.1
        nu = EmpiricalMeasure(pts, wnu / wnu.sum())
        wmu = gen.random(n) + 0.1
        mu = EmpiricalMeasure(pts, wmu / wmu.sum())
        val = relative_entropy(mu, nu)
        assert val >= -1e-12
        same = np.allclose(mu.weights, nu.weights, atol=1e-12)
        if same:
            assert val == pytest.approx(0.0, abs=1e-10)
        else:
            assert val > 0.0


class TestSerialization:
    def test_csv_roundtrip(self):
        mu = EmpiricalMeasure(np.array([[0.1, -2.0], [3.5, 4.0]]), np.array([0.3, 0.7]))
        back = measure_from_csv(measure_to_csv(mu))
        assert np.array_equal(back.points, mu.points)
        assert np.array_equal(back.weights, mu.weights)


class TestInvariants:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.6, 0.6]))

    def test_weights_nonnegative(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([1.5, -0.5]))

    def test_points_must_share_dimension(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([1.0, 2.0, 3.0]).reshape(3, 1)[:, :0])
