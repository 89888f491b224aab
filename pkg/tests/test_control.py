"""Policy shapes, shifting bijection, path scaling, the sign control."""

import math

import numpy as np
import pytest

from mfcontrol import rng
from mfcontrol.control import (
    ActionBox,
    Constant,
    OpenLoop,
    counterexample_optimal_control,
    delayed,
    scale_path,
    scale_path_inverse,
    shift_backward,
    shift_forward,
)


class TestActionBox:
    def test_clamp_counts_entries(self):
        box = ActionBox([-1.0], [1.0])
        a, n = box.clamp(np.array([[0.5], [2.0], [-3.0]]))
        assert n == 2
        assert np.allclose(a.ravel(), [0.5, 1.0, -1.0])

    def test_grid_covers_the_box(self):
        box = ActionBox([-1.0, 0.0], [1.0, 2.0], grid_resolution=5)
        g = box.grid()
        assert g.shape == (25, 2)
        assert g.min(axis=0) == pytest.approx([-1.0, 0.0])
        assert g.max(axis=0) == pytest.approx([1.0, 2.0])


class TestShifting:
    def test_constant_passes_through(self):
        c = Constant(0.3)
        assert shift_forward(c, 2.0) is c

    def test_forward_then_backward_is_identity_on_decisions(self):
        def rule(s, path, u):
            return np.tanh(path[-1, :, 0]) + 0.1 * s

        ctrl = OpenLoop(rule)
        round_trip = shift_backward(shift_forward(ctrl, 1.5), 1.5)
        gen = np.random.default_rng(0)
        path = gen.standard_normal((11, 8, 1))
        u = gen.random(8)
        for s in (0.0, 0.3, 1.0):
            assert np.array_equal(round_trip.rule(s, path, u), rule(s, path, u))

    def test_shifted_rule_replays_on_the_increment_path(self):
        # the wrapper must evaluate the base rule at the local clock on
        # the unchanged increment path
        seen = {}

        def rule(s, path, u):
            seen["s"] = s
            seen["path0"] = path[0].copy()
            return np.zeros(path.shape[1])

        sh = shift_forward(OpenLoop(rule), 2.0)
        assert sh.restricted_from == 2.0
        path = np.ones((3, 4, 1))
        sh.rule(2.5, path, np.zeros(4))
        assert seen["s"] == pytest.approx(0.5)
        assert np.array_equal(seen["path0"], path[0])

    def test_forward_requires_full_class(self):
        restricted = OpenLoop(lambda s, p, u: np.zeros(p.shape[1]), restricted_from=1.0)
        with pytest.raises(ValueError):
            shift_forward(restricted, 1.0)
        with pytest.raises(ValueError):
            shift_backward(OpenLoop(lambda s, p, u: np.zeros(p.shape[1])), 1.0)


class TestScalePath:
    def test_zero_path_maps_to_zero(self):
        v = np.zeros((21, 1))
        w = scale_path(v, 0.5, 1.0, 0.025)
        assert np.all(w == 0.0)

    def test_degenerate_t_zero_is_identity(self):
        gen = np.random.default_rng(1)
        v = np.cumsum(gen.standard_normal((41, 1)), axis=0)
        w = scale_path(v, 0.0, 1.0, 0.025)
        assert np.allclose(w, v, atol=1e-12)

    def test_round_trip_on_aligned_grids(self):
        # u/(u-t) = 2 maps input knots onto output knots exactly
        gen = np.random.default_rng(2)
        v = np.cumsum(gen.standard_normal((51, 1)), axis=0) * 0.1
        w = scale_path(v, 0.5, 1.0, 1e-2)
        back = scale_path_inverse(w, 0.5, 1.0, 1e-2)
        assert np.max(np.abs(back - v)) <= 1e-9

    def test_brownian_law_is_preserved(self):
        # empirical variance of w(s) across samples approximates s
        t, u, dt, n_paths = 0.3, 1.0, 1e-2, 10_000
        n = int(round((u - t) / dt))
        gen = rng.stream(77, "probe")
        incs = gen.standard_normal((n_paths, n)) * math.sqrt(dt)
        paths = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(incs, axis=1)], axis=1)
        w = np.stack([scale_path(p[:, None], t, u, dt) for p in paths])[:, :, 0]
        s_grid = dt * np.arange(w.shape[1])
        for s_target in (0.3, 0.6, 0.9):
            k = int(round(s_target / dt))
            emp = float(w[:, k].var())
            # 3 sigma of the chi^2 sampling noise plus the O(dt) interpolation bias
            tol = 3.0 * math.sqrt(2.0 / n_paths) * s_grid[k] + 2.0 * dt
            assert abs(emp - s_grid[k]) <= tol

    def test_bad_interval_rejected(self):
        with pytest.raises(ValueError):
            scale_path(np.zeros((5, 1)), 1.0, 1.0, 0.1)


class TestCounterexampleControl:
    def test_sign_branches(self):
        ctrl = counterexample_optimal_control(0.25, 1e-3)
        idx = int(round(0.125 / 1e-3))
        path = np.zeros((idx + 1, 2, 1))
        path[idx, 0, 0] = 0.3
        path[idx, 1, 0] = -0.1
        a = ctrl.rule(0.25, path, np.zeros(2))
        assert a[0] == 1.0 and a[1] == -1.0

    def test_zero_counts_as_plus_one(self):
        ctrl = counterexample_optimal_control(0.25, 1e-3)
        idx = int(round(0.125 / 1e-3))
        path = np.zeros((idx + 1, 1, 1))
        assert ctrl.rule(0.25, path, np.zeros(1))[0] == 1.0

    def test_split_fraction_is_one_half(self):
        # P(B_{t/2} >= 0) = 1/2; check across sampled stub endpoints
        t, dt, n = 0.25, 1e-3, 10_000
        idx = int(round((t / 2) / dt))
        gen = rng.stream(3, "probe")
        endpoint = gen.standard_normal(n) * math.sqrt(idx * dt)
        path = np.zeros((idx + 1, n, 1))
        path[idx, :, 0] = endpoint
        ctrl = counterexample_optimal_control(t, dt)
        frac = float(np.mean(ctrl.rule(t, path, np.zeros(n)) == 1.0))
        assert frac == pytest.approx(0.5, abs=0.02)

    def test_off_grid_half_time_rejected(self):
        with pytest.raises(ValueError):
            counterexample_optimal_control(0.25, dt=1e-3 * 1.0001)

    def test_domain(self):
        with pytest.raises(ValueError):
            counterexample_optimal_control(0.6, 1e-3)


class TestDelayed:
    def test_fill_before_activation(self):
        base = OpenLoop(lambda s, p, u: np.ones(p.shape[1]))
        d = delayed(base, 0.5, fill=0.0)
        path = np.zeros((3, 4, 1))
        assert np.all(d.rule(0.2, path, np.zeros(4)) == 0.0)
        assert np.all(d.rule(0.7, path, np.zeros(4)) == 1.0)
