"""Gain estimation, truncation certificates, value search, DPP, invariances."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mfcontrol.control import ActionBox, Constant, OpenLoop, linear_feedback
from mfcontrol.control import counterexample_optimal_control, delayed
from mfcontrol.gain_value import (
    ParametricFamily,
    combined_tolerance,
    continuity_probe,
    dpp_residual,
    dt_bias_allowance,
    estimate_gain,
    estimate_value,
    law_invariance_check,
    tail_bound,
    time_invariance_check,
)
from mfcontrol.problems import (
    HypothesisError,
    SDEProblem,
    bounded_problem,
    counterexample_problem,
    lq_problem,
    lq_reference,
)
from mfcontrol.sde import antithetic, dirac, from_quantile, gaussian, negated


def static_with_f(f, beta=1.0, K=None, C_f=None):
    def b(x, sm, a):
        return np.zeros_like(x)

    def s(x, sm, a):
        return np.zeros((len(x), 1, 1))

    if K is None and C_f is None:
        C_f = 1.0
    return SDEProblem(d=1, m=1, action_set=ActionBox([-1], [1]), b=b, sigma=s, f=f,
                      beta=beta, L=0.0, M=0.01, K=K, C_f=C_f, label="static-f")


class TestEstimateGain:
    def test_unit_gain_matches_the_discount_integral(self):
        p = static_with_f(lambda x, sm, a: np.ones(len(x)), beta=1.0)
        T, dt = 2.0, 1e-3
        est = estimate_gain(p, Constant(0.0), 0.0, dirac(0.0), T, dt, 50, seed=1)
        exact = (1.0 - math.exp(-T)) / 1.0
        # trapezoid error bound: dt^2 * beta / 2 per unit time
        assert abs(est.value - exact) <= dt**2 * 1.0 / 2.0 * T
        assert est.mc_stderr == pytest.approx(0.0, abs=1e-15)

    def test_linear_gain_at_a_frozen_state(self):
        p = static_with_f(lambda x, sm, a: x[:, 0], beta=2.0, K=1.0)
        T = 2.0
        est = estimate_gain(p, Constant(0.0), 0.0, dirac(1.0), T, 1e-3, 10, seed=1)
        assert est.value == pytest.approx((1.0 - math.exp(-2.0 * T)) / 2.0, abs=1e-5)

    def test_lq_oracle_feedback_reaches_the_riccati_value(self):
        p = lq_problem()
        ref = lq_reference()
        xi = gaussian(0.5, 0.4)
        est = estimate_gain(p, linear_feedback(ref.k1, ref.k2), 0.0, xi,
                            3.0, 1e-3, 4000, seed=5)
        from mfcontrol import rng
        from mfcontrol.measures import EmpiricalMeasure
        mu0 = EmpiricalMeasure.from_points(xi.sampler(rng.uniforms(5, 4000)))
        target = ref.value(mu0)
        tol = 2.0 * (est.mc_stderr + est.tail_bound + dt_bias_allowance(1e-3, 3.0))
        assert abs(est.value - target) <= tol

    def test_counterexample_terminal_gain(self):
        bundle = counterexample_problem(0.25)
        est = estimate_gain(bundle, Constant(1.0), 0.25, dirac(0.0),
                            bundle.T, 1e-3, 500, seed=2)
        assert est.value == pytest.approx(-math.log(2.0), abs=1e-10)
        assert est.tail_bound == 0.0


class TestTailBound:
    def test_bounded_plug_in(self):
        p = bounded_problem(beta=1.0)
        # C_f e^{-beta tau} / beta with C_f = 1.1
        assert tail_bound(p, 10.0, 0.0, 0.0) == pytest.approx(1.1 * math.exp(-10.0))

    def test_doubling_the_horizon_squares_the_exponential_factor(self):
        p = bounded_problem(beta=1.0)
        t1 = tail_bound(p, 10.0, 0.0, 0.0)
        t2 = tail_bound(p, 20.0, 0.0, 0.0)
        # e^{-2 beta T} = (e^{-beta T})^2: the e-factor at 2T is the square
        assert t2 / t1 == pytest.approx(math.exp(-10.0), rel=1e-12)
        assert t2 <= t1**2 / (p.C_f / p.beta) * (1 + 1e-12)

    @pytest.mark.parametrize("tau", [0.5, 1.0, 2.5])
    def test_quadratic_closed_form_against_quadrature(self, tau):
        p = lq_problem()
        xi_norm = 0.6
        c = 12 * p.M**2 + 1

        def integrand(u):
            return p.K * math.exp(-p.beta * u) * (
                1 + 2 * (xi_norm**2 + 6 * p.M**2 * u) * math.exp(c * u))

        numeric, _ = quad(integrand, tau, 150.0)
        assert tail_bound(p, tau, 0.0, xi_norm) == pytest.approx(numeric, rel=1e-10)

    def test_degenerate_m_zero_integral(self):
        # with M = 0 the envelope keeps its e^{u} Gronwall factor:
        # K [ e^{-beta tau}/beta + 2 ||xi||^2 e^{-(beta-1) tau} / (beta-1) ]
        p = static_with_f(lambda x, sm, a: np.ones(len(x)), beta=3.0, K=1.0)
        p = SDEProblem(**{**p.__dict__, "M": 0.0, "C_f": None, "hypothesis_flags": ()})
        xi_norm, tau = 2.0, 1.5
        expected = 1.0 * (math.exp(-3 * tau) / 3.0
                          + 2 * xi_norm**2 * math.exp(-2 * tau) / 2.0)
        assert tail_bound(p, tau, 0.0, xi_norm) == pytest.approx(expected, rel=1e-12)

    def test_beta_below_the_weak_bound_raises(self):
        p = lq_problem()
        bad = SDEProblem(**{**p.__dict__, "beta": 3.0, "hypothesis_flags": ()})
        with pytest.raises(HypothesisError):
            tail_bound(bad, 2.0, 0.0, 1.0)

    def test_truncation_certificate_on_both_growth_regimes(self):
        xi = gaussian(0.5, 0.4)
        for p, ctrl, T, dt in [
            (lq_problem(), Constant(0.2), 3.0, 1e-3),
            (bounded_problem(), Constant(0.3), 7.0, 2e-3),
        ]:
            jT = estimate_gain(p, ctrl, 0.0, xi, T, dt, 1000, seed=5)
            j2T = estimate_gain(p, ctrl, 0.0, xi, 2 * T, dt, 1000, seed=5)
            assert jT.tail_bound <= 0.01
            assert abs(jT.value - j2T.value) <= jT.tail_bound + 3 * (
                jT.mc_stderr + j2T.mc_stderr)


class TestEstimateValue:
    def test_singleton_family(self):
        p = static_with_f(lambda x, sm, a: np.ones(len(x)))
        est = estimate_value(p, [("only", Constant(0.0))], 0.0, dirac(0.0),
                             2.0, 1e-2, 20, seed=1)
        gain = estimate_gain(p, Constant(0.0), 0.0, dirac(0.0), 2.0, 1e-2, 20, seed=1)
        assert est.value == gain.value
        assert est.best_label == "only"

    def test_counterexample_restricted_constants(self):
        bundle = counterexample_problem(0.25)
        est = estimate_value(bundle, [Constant(1.0, label="+1"), Constant(-1.0, label="-1")],
                             0.25, dirac(0.0), bundle.T, 1e-3, 2000, seed=3)
        assert est.value == pytest.approx(-math.log(2.0), abs=0.02)

    def test_lq_gain_grid_brackets_the_oracle(self):
        p = lq_problem()
        ref = lq_reference()
        k1s = ref.k1 + np.linspace(-0.02, 0.02, 5)
        k2s = ref.k2 + np.linspace(-0.02, 0.02, 5)
        family = [(f"k({i},{j})", linear_feedback(k1, k2))
                  for i, k1 in enumerate(k1s) for j, k2 in enumerate(k2s)]
        est = estimate_value(p, family, 0.0, gaussian(0.5, 0.4), 2.5, 2e-3, 2000, seed=9)
        i, j = map(int, est.best_label[2:-1].split(","))
        # argmax within one grid cell of the oracle gains
        assert abs(k1s[i] - ref.k1) <= 0.0100001
        assert abs(k2s[j] - ref.k2) <= 0.0100001

    def test_common_random_numbers_make_enlargement_monotone_exactly(self):
        p = lq_problem()
        xi = gaussian(0.5, 0.4)
        small = [Constant(0.0, label="c0"), Constant(0.4, label="c4")]
        big = small + [Constant(-0.4, label="cm4"), Constant(0.8, label="c8")]
        v_small = estimate_value(p, small, 0.0, xi, 1.0, 1e-2, 200, seed=4)
        v_big = estimate_value(p, big, 0.0, xi, 1.0, 1e-2, 200, seed=4)
        assert v_big.value >= v_small.value  # exact, same seeds
        small_vals = dict((lab, e.value) for lab, e in v_small.trace)
        big_vals = dict((lab, e.value) for lab, e in v_big.trace)
        for lab in small_vals:
            assert big_vals[lab] == small_vals[lab]

    def test_cross_entropy_recovers_the_oracle_region(self):
        p = lq_problem()
        ref = lq_reference()
        fam = ParametricFamily(
            make=lambda k: linear_feedback(float(k[0]), float(k[1])),
            lows=np.array([-0.3, -0.3]), highs=np.array([0.3, 0.3]),
            label="lin")
        est = estimate_value(p, fam, 0.0, gaussian(0.5, 0.4), 2.0, 5e-3, 500,
                             seed=10, search="cross-entropy", budget=60)
        grid_best = estimate_value(
            p, [("oracle", linear_feedback(ref.k1, ref.k2))],
            0.0, gaussian(0.5, 0.4), 2.0, 5e-3, 500, seed=10)
        assert est.value >= grid_best.value - 3 * grid_best.best.mc_stderr - 0.01

    def test_empty_family_rejected(self):
        with pytest.raises(ValueError):
            estimate_value(lq_problem(), [], 0.0, dirac(0.0), 1.0, 1e-2, 10, seed=1)


class TestDPP:
    def test_static_problem_decomposes_exactly(self):
        # frozen state: v = E f(xi)/beta and the window + discounted
        # continuation reproduce it up to quadrature error only
        p = static_with_f(lambda x, sm, a: x[:, 0], beta=2.0, K=1.0)
        rep = dpp_residual(p, [("c", Constant(0.0))], 0.0, 0.5, dirac(1.0),
                           12.0, 1e-3, 50, seed=2)
        assert rep.argmax_gap <= 5e-4
        assert rep.passed

    def test_lq_equality_at_the_oracle_and_slack_off_it(self):
        p = lq_problem()
        ref = lq_reference()
        family = [("oracle", linear_feedback(ref.k1, ref.k2)),
                  ("bad", Constant(0.8))]
        rep = dpp_residual(p, family, 0.0, 0.5, gaussian(0.5, 0.4),
                           3.0, 1e-3, 3000, seed=31)
        assert rep.passed
        assert rep.argmax_label == "oracle"
        bad = next(r for r in rep.rows if r.label == "bad")
        assert bad.slack > bad.tolerance  # strictly suboptimal beyond noise

    def test_requires_a_later_split_time(self):
        with pytest.raises(ValueError):
            dpp_residual(lq_problem(), [("c", Constant(0.0))], 0.5, 0.5,
                         dirac(0.0), 2.0, 1e-2, 10, seed=1)


class TestTimeInvariance:
    def test_constant_control_is_exact_by_translation(self):
        p = lq_problem()
        rep = time_invariance_check(p, Constant(0.3), 1.0, gaussian(0.5, 0.4),
                                    2.0, 1e-2, 200, seed=6)
        assert rep.coupled_diff == 0.0
        assert rep.passed

    def test_path_dependent_control_couples_to_machine_precision(self):
        p = lq_problem()

        def rule(s, path, u):
            return 0.8 * np.tanh(path[(len(path) - 1) // 2, :, 0])

        rep = time_invariance_check(p, OpenLoop(rule), 1.0, gaussian(0.5, 0.4),
                                    2.0, 1e-2, 500, seed=42)
        assert rep.coupled_diff <= 1e-10
        assert rep.stat_ok

    def test_counterexample_breaks_invariance_by_log_two(self):
        # cost class violates the continuity hypothesis: the value at t
        # over the restricted class differs from the value at 0 by log 2
        bundle = counterexample_problem(0.25)
        dt, N = 1e-3, 4000
        restricted = estimate_value(
            bundle, [Constant(1.0, label="+1"), Constant(-1.0, label="-1")],
            bundle.t, dirac(0.0), bundle.T, dt, N, seed=7)
        star = delayed(counterexample_optimal_control(bundle.t, dt), bundle.t)
        from_zero = estimate_value(bundle, [("delayed*", star)], 0.0, dirac(0.0),
                                   bundle.T, dt, N, seed=7)
        gap = from_zero.value - restricted.value
        assert gap == pytest.approx(math.log(2.0), abs=0.05)


class TestLawInvariance:
    def family(self):
        ref = lq_reference()
        return [("oracle", linear_feedback(ref.k1, ref.k2)), ("c0", Constant(0.0))]

    def test_sign_flip_of_a_symmetric_law(self):
        p = lq_problem()
        xi = gaussian(0.0, 0.5)
        rep = law_invariance_check(p, self.family(), 0.0, xi, negated(xi),
                                   3.0, 1e-3, 2000, 11, 12)
        assert rep.passed

    def test_antithetic_quantile_representation(self):
        p = lq_problem()
        xi = from_quantile(lambda u: 0.5 + 0.4 * np.sqrt(u))
        rep = law_invariance_check(p, self.family(), 0.0, xi, antithetic(xi),
                                   3.0, 1e-3, 2000, 11, 12)
        assert rep.passed

    def test_same_spec_different_seeds_noise_floor(self):
        p = lq_problem()
        xi = gaussian(0.5, 0.4)
        rep = law_invariance_check(p, self.family(), 0.0, xi, xi,
                                   3.0, 1e-3, 2000, 11, 12)
        assert rep.passed


class TestContinuityProbe:
    def test_matched_seed_differences_shrink_with_delta(self):
        p = lq_problem()

        def rule(s, path, u):
            return 0.5 * np.tanh(path[-1, :, 0])

        tbl = continuity_probe(p, OpenLoop(rule), 0.5, gaussian(0.5, 0.4),
                               deltas=[0.4, 0.2, 0.1], T_trunc=2.0, dt=1e-2,
                               N=500, seed=3)
        diffs = [d for _, d in tbl.time_rows]
        assert max(diffs) <= 0.05
        assert not tbl.blowup_flag

    def test_lq_lipschitz_ratios_stay_bounded(self):
        p = lq_problem()
        ref = lq_reference()
        tbl = continuity_probe(p, linear_feedback(ref.k1, ref.k2), 0.0,
                               gaussian(0.5, 0.4), deltas=[0.1],
                               T_trunc=3.0, dt=2e-3, N=2000, seed=4)
        ratios = [r for _, _, r in tbl.lipschitz_rows]
        assert max(ratios) <= 2.0
        assert not tbl.blowup_flag

    def test_static_fixed_absolute_horizon_shift_has_closed_form(self):
        # J truncated at an absolute horizon T: delaying the start by
        # delta drops exactly the last discounted slice of length delta
        p = static_with_f(lambda x, sm, a: np.ones(len(x)), beta=2.0)
        T, delta, dt = 2.0, 0.25, 1e-3
        j0 = estimate_gain(p, Constant(0.0), 0.0, dirac(1.0), T, dt, 10, seed=1)
        jd = estimate_gain(p, Constant(0.0), delta, dirac(1.0), T, dt, 10, seed=1)
        expected = ((1 - math.exp(-2.0 * T)) - (1 - math.exp(-2.0 * (T - delta)))) / 2.0
        assert abs(j0.value - jd.value) == pytest.approx(expected, abs=1e-5)


class TestToleranceComposition:
    def test_rule_is_three_stderr_plus_tails_plus_bias(self):
        a = estimate_gain(bounded_problem(), Constant(0.0), 0.0, gaussian(0.0, 1.0),
                          5.0, 1e-2, 100, seed=1)
        b = estimate_gain(bounded_problem(), Constant(0.1), 0.0, gaussian(0.0, 1.0),
                          5.0, 1e-2, 100, seed=1)
        tol = combined_tolerance(a, b, dt_bias=0.007)
        assert tol == pytest.approx(3 * (a.mc_stderr + b.mc_stderr)
                                    + a.tail_bound + b.tail_bound + 0.007)
