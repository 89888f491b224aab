"""Discounted gain estimation and the structural checks built on it.

Gains are always maximized; cost problems store gain = -cost. Estimates
carry three error components that the rest of the package composes into
one acceptance rule: Monte Carlo standard error (particle-level),
a certified truncation tail bound (from the declared growth hypotheses,
never from the data), and a declared time-step bias allowance.

Value estimates are suprema over declared control families only; they
are lower bounds on the true value and every report says which family
produced them. Comparisons between estimates always use common random
numbers so that coupled quantities differ by physics, not by noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from . import rng
from .control import ControlPolicy, shift_forward
from .measures import EmpiricalMeasure
from .problems import CounterexampleProblem, HypothesisError, SDEProblem
from .sde import InitialCondition, euler_run, from_measure

__all__ = [
    "GainEstimate",
    "ValueEstimate",
    "ParametricFamily",
    "estimate_gain",
    "tail_bound",
    "estimate_value",
    "combined_tolerance",
    "dt_bias_allowance",
    "dpp_residual",
    "DPPReport",
    "time_invariance_check",
    "TimeInvarianceReport",
    "law_invariance_check",
    "LawInvarianceReport",
    "continuity_probe",
    "ContinuityTable",
    "shifted",
]


@dataclass(frozen=True)
class GainEstimate:
    """Monte Carlo estimate of a discounted gain with certified errors."""

    value: float
    mc_stderr: float
    tail_bound: float
    T_trunc: float
    dt: float
    N: int
    seed: int
    t0: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.mc_stderr < 0 or self.tail_bound < 0:
            raise ValueError("error components must be nonnegative")


@dataclass(frozen=True)
class ValueEstimate:
    """Family-relative value: max of per-candidate gain estimates."""

    value: float
    best_label: str
    best_policy: ControlPolicy
    trace: tuple  # ((label, GainEstimate), ...) in evaluation order

    @property
    def best(self) -> GainEstimate:
        for label, est in self.trace:
            if label == self.best_label:
                return est
        raise LookupError(self.best_label)


def dt_bias_allowance(dt: float, horizon: float, coeff: float = 1.0) -> float:
    """Declared weak-error allowance of the Euler scheme: coeff * dt * horizon."""
    return coeff * dt * horizon


def combined_tolerance(*estimates: GainEstimate, dt_bias: float = 0.0) -> float:
    """The package-wide comparison rule: 3 * sum(stderr) + tails + dt bias."""
    return (3.0 * sum(e.mc_stderr for e in estimates)
            + sum(e.tail_bound for e in estimates) + dt_bias)


def tail_bound(problem: SDEProblem, T_trunc: float, t0: float, xi_norm: float) -> float:
    """Certified bound on the discarded gain past the truncation horizon.

    Bounded gain: C_f e^{-beta tau} / beta. Quadratic growth: the closed
    form of K * int_tau^inf e^{-beta u} (1 + 2(||xi||^2 + 6 M^2 u)
    e^{(12 M^2 + 1) u}) du, which requires beta > 12 M^2 + 1.
    """
    tau = T_trunc - t0
    if tau < 0:
        raise ValueError("T_trunc must not precede t0")
    beta = problem.beta
    if problem.gain_kind == "bounded":
        return problem.C_f * math.exp(-beta * tau) / beta
    if problem.gain_kind == "quadratic":
        c = 12.0 * problem.M**2 + 1.0
        if beta <= c:
            raise HypothesisError(
                f"tail bound undefined: beta = {beta:g} <= 12M^2+1 = {c:g}")
        A, D = xi_norm**2, 6.0 * problem.M**2
        g = beta - c
        return problem.K * (math.exp(-beta * tau) / beta
                            + 2.0 * math.exp(-g * tau) * ((A + D * tau) / g + D / g**2))
    raise HypothesisError("no gain growth hypothesis declared; tail bound unavailable")


def estimate_gain(
    problem: Union[SDEProblem, CounterexampleProblem],
    ctrl: ControlPolicy,
    t0: float,
    xi: InitialCondition,
    T_trunc: float,
    dt: float,
    N: int,
    seed: int,
    include_tail: bool = True,
    label: str = "",
) -> GainEstimate:
    """Trapezoidal discounted gain along simulated paths.

    For a finite-horizon terminal-cost bundle the horizon is the bundle's
    own T, the terminal gain is a functional of the terminal empirical
    law (so it carries no particle-level standard error), and no
    truncation tail applies.
    """
    label = label or getattr(ctrl, "label", ctrl.__class__.__name__)
    if isinstance(problem, CounterexampleProblem):
        bundle, p = problem, problem.problem
        out = euler_run(p, ctrl, t0, xi, bundle.T, dt, N, seed,
                        keep_states=False, accumulate_gain=True)
        running = out["gains"]
        terminal = bundle.terminal_gain(EmpiricalMeasure.from_points(out["final_states"]))
        stderr = float(np.std(running, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
        return GainEstimate(value=float(np.mean(running)) + terminal,
                            mc_stderr=stderr, tail_bound=0.0,
                            T_trunc=bundle.T, dt=dt, N=N, seed=seed, t0=t0, label=label)

    out = euler_run(problem, ctrl, t0, xi, T_trunc, dt, N, seed,
                    keep_states=False, accumulate_gain=True)
    gains = out["gains"]
    stderr = float(np.std(gains, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    tail = 0.0
    if include_tail:
        xi_norm = math.sqrt(out["second_moments"][out["t0_index"]])
        tail = tail_bound(problem, T_trunc, t0, xi_norm)
    return GainEstimate(value=float(np.mean(gains)), mc_stderr=stderr, tail_bound=tail,
                        T_trunc=T_trunc, dt=dt, N=N, seed=seed, t0=t0, label=label)


# ---------------------------------------------------------------------------
# value estimation over declared families


@dataclass(frozen=True)
class ParametricFamily:
    """Continuously parametrized candidates for cross-entropy search."""

    make: Callable[[np.ndarray], ControlPolicy]
    lows: np.ndarray
    highs: np.ndarray
    label: str = "parametric"


def _normalize_family(family) -> list:
    out = []
    for item in family:
        if isinstance(item, tuple):
            out.append(item)
        else:
            out.append((getattr(item, "label", item.__class__.__name__), item))
    return out


def estimate_value(
    problem: Union[SDEProblem, CounterexampleProblem],
    family,
    t0: float,
    xi: InitialCondition,
    T_trunc: float,
    dt: float,
    N: int,
    seed: int,
    search: str = "grid",
    budget: int = 256,
) -> ValueEstimate:
    """Maximize the estimated gain over a declared family of controls.

    Every candidate is evaluated with the same seed (common random
    numbers): enlarging the family can only raise the value, exactly.
    ``family`` is an iterable of policies (or (label, policy) pairs) for
    grid search, or a ParametricFamily for cross-entropy search.
    """
    if isinstance(family, ParametricFamily):
        if search != "cross-entropy":
            raise ValueError("a ParametricFamily requires search='cross-entropy'")
        return _cross_entropy_value(problem, family, t0, xi, T_trunc, dt, N, seed, budget)
    candidates = _normalize_family(family)
    if not candidates:
        raise ValueError("empty control family")
    if len(candidates) > budget:
        candidates = candidates[:budget]
    trace = []
    for lab, pol in candidates:
        trace.append((lab, estimate_gain(problem, pol, t0, xi, T_trunc, dt, N, seed,
                                         label=lab)))
    best_label, best_est = max(trace, key=lambda kv: kv[1].value)
    best_policy = dict(candidates)[best_label]
    return ValueEstimate(value=best_est.value, best_label=best_label,
                         best_policy=best_policy, trace=tuple(trace))


def _cross_entropy_value(problem, fam: ParametricFamily, t0, xi, T_trunc, dt, N, seed,
                         budget: int, n_iter: int = 5, elite_frac: float = 0.25):
    lows = np.atleast_1d(np.asarray(fam.lows, dtype=float))
    highs = np.atleast_1d(np.asarray(fam.highs, dtype=float))
    pop = max(budget // n_iter, 4)
    gen = rng.stream(seed, "probe")
    mean = 0.5 * (lows + highs)
    std = 0.5 * (highs - lows)
    trace = []
    best = (-math.inf, None, None)
    for it in range(n_iter):
        params = mean + std * gen.standard_normal((pop, len(lows)))
        params = np.clip(params, lows, highs)
        scored = []
        for p_vec in params:
            pol = fam.make(p_vec)
            lab = f"{fam.label}[{','.join(f'{v:.4g}' for v in p_vec)}]"
            est = estimate_gain(problem, pol, t0, xi, T_trunc, dt, N, seed, label=lab)
            trace.append((lab, est))
            scored.append((est.value, p_vec, pol, lab, est))
            if est.value > best[0]:
                best = (est.value, pol, lab)
        scored.sort(key=lambda r: -r[0])
        elite = np.array([r[1] for r in scored[: max(int(elite_frac * pop), 2)]])
        mean = elite.mean(axis=0)
        std = elite.std(axis=0) + 1e-6
    return ValueEstimate(value=best[0], best_label=best[2], best_policy=best[1],
                         trace=tuple(trace))


# ---------------------------------------------------------------------------
# dynamic programming residual


@dataclass(frozen=True)
class DPPRow:
    label: str
    window_gain: float
    window_stderr: float
    inner_value: float
    rhs: float
    slack: float          # lhs - rhs; one-sided check needs slack >= -tolerance
    tolerance: float
    one_sided_ok: bool


@dataclass(frozen=True)
class DPPReport:
    lhs: ValueEstimate
    rows: tuple
    argmax_label: str
    argmax_gap: float
    argmax_tolerance: float

    @property
    def one_sided_ok(self) -> bool:
        return all(r.one_sided_ok for r in self.rows)

    @property
    def argmax_ok(self) -> bool:
        return self.argmax_gap <= self.argmax_tolerance

    @property
    def passed(self) -> bool:
        return self.one_sided_ok and self.argmax_ok


def dpp_residual(
    problem: SDEProblem,
    family,
    t0: float,
    s: float,
    xi: InitialCondition,
    T_trunc: float,
    dt: float,
    N: int,
    seed: int,
    dt_bias_coeff: float = 1.0,
) -> DPPReport:
    """Check the dynamic-programming decomposition over an intermediate time.

    For every candidate: run it to time s, collect the discounted window
    gain and the empirical law at s, then re-estimate the family value
    from that law (time invariance lets the inner problem restart at 0).
    One-sided inequality lhs >= rhs - tolerance must hold per candidate;
    near-equality is required at the family argmax.
    """
    if s <= t0:
        raise ValueError("need s > t0")
    lhs = estimate_value(problem, family, t0, xi, T_trunc, dt, N, seed)
    candidates = _normalize_family(family)
    disc = math.exp(-problem.beta * (s - t0))
    bias = dt_bias_allowance(dt, T_trunc - t0, dt_bias_coeff)

    rows = []
    for lab, pol in candidates:
        out = euler_run(problem, pol, t0, xi, s, dt, N, seed,
                        keep_states=False, accumulate_gain=True)
        window = out["gains"]
        w_mean = float(np.mean(window))
        w_se = float(np.std(window, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
        cloud = EmpiricalMeasure.from_points(out["final_states"])
        inner = estimate_value(problem, family, 0.0, from_measure(cloud),
                               T_trunc - (s - t0), dt, N, seed + 7919)
        rhs = w_mean + disc * inner.value
        tol = (3.0 * (lhs.best.mc_stderr + w_se + inner.best.mc_stderr)
               + lhs.best.tail_bound + disc * inner.best.tail_bound + bias)
        slack = lhs.value - rhs
        rows.append(DPPRow(label=lab, window_gain=w_mean, window_stderr=w_se,
                           inner_value=inner.value, rhs=rhs, slack=slack,
                           tolerance=tol, one_sided_ok=slack >= -tol))
    best_row = max(rows, key=lambda r: r.rhs)
    return DPPReport(lhs=lhs, rows=tuple(rows), argmax_label=best_row.label,
                     argmax_gap=abs(lhs.value - best_row.rhs),
                     argmax_tolerance=best_row.tolerance)


# ---------------------------------------------------------------------------
# invariance checks


@dataclass(frozen=True)
class TimeInvarianceReport:
    coupled_diff: float
    coupled_tol: float
    stat_diff: float
    stat_tol: float

    @property
    def coupled_ok(self) -> bool:
        return self.coupled_diff <= self.coupled_tol

    @property
    def stat_ok(self) -> bool:
        return self.stat_diff <= self.stat_tol

    @property
    def passed(self) -> bool:
        return self.coupled_ok and self.stat_ok


def time_invariance_check(
    problem: SDEProblem,
    ctrl: ControlPolicy,
    t: float,
    xi: InitialCondition,
    T_trunc: float,
    dt: float,
    N: int,
    seed: int,
    coupled_tol: float = 1e-10,
) -> TimeInvarianceReport:
    """J(0, xi, alpha) against J(t, xi, alpha shifted forward by t).

    Coupling-exact leg: matched increment seeds make the two runs
    bit-identical after time translation, so the difference must vanish
    to machine precision. Statistical leg: an independently seeded rerun
    must agree within the composed stderr tolerance. Initial conditions
    are sampled from U alone by construction, as the shift argument
    requires.
    """
    j0 = estimate_gain(problem, ctrl, 0.0, xi, T_trunc, dt, N, seed)
    shifted_ctrl = shift_forward(ctrl, t)
    jt = estimate_gain(problem, shifted_ctrl, t, xi, t + T_trunc, dt, N, seed)
    jt_b = estimate_gain(problem, shifted_ctrl, t, xi, t + T_trunc, dt, N, seed + 104729)
    return TimeInvarianceReport(
        coupled_diff=abs(j0.value - jt.value),
        coupled_tol=coupled_tol,
        stat_diff=abs(j0.value - jt_b.value),
        stat_tol=combined_tolerance(j0, jt_b),
    )


@dataclass(frozen=True)
class LawInvarianceReport:
    value_a: float
    value_b: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.value_a - self.value_b) <= self.tolerance


def law_invariance_check(
    problem: Union[SDEProblem, CounterexampleProblem],
    family,
    t0: float,
    xi_a: InitialCondition,
    xi_b: InitialCondition,
    T_trunc: float,
    dt: float,
    N: int,
    seed_a: int,
    seed_b: int,
) -> LawInvarianceReport:
    """Values under two initial variables with the same law must agree."""
    va = estimate_value(problem, family, t0, xi_a, T_trunc, dt, N, seed_a)
    vb = estimate_value(problem, family, t0, xi_b, T_trunc, dt, N, seed_b)
    return LawInvarianceReport(
        value_a=va.value, value_b=vb.value,
        tolerance=combined_tolerance(va.best, vb.best),
    )


# ---------------------------------------------------------------------------
# continuity diagnostics


def shifted(xi: InitialCondition, eps: float) -> InitialCondition:
    """Translate an initial condition by eps in every coordinate."""
    return InitialCondition(lambda u: xi.sampler(u) + eps,
                            label=f"{xi.label}+{eps:g}")


@dataclass(frozen=True)
class ContinuityTable:
    time_rows: tuple      # (delta, |J(t+delta) - J(t)|)
    lipschitz_rows: tuple  # (eps, W1, |v(mu) - v(mu')| / W1)
    blowup_flag: bool


def continuity_probe(
    problem: SDEProblem,
    ctrl: ControlPolicy,
    t: float,
    xi: InitialCondition,
    deltas: Sequence[float],
    T_trunc: float,
    dt: float,
    N: int,
    seed: int,
    eps_list: Sequence[float] = (0.1, 0.05, 0.025),
) -> ContinuityTable:
    """Empirical moduli: gain in the start time, value in the initial law.

    Diagnostic only -- the table reports |J(t+delta) - J(t)| with matched
    seeds and the W1 difference quotients over shifted initial laws; the
    flag trips when the quotients grow monotonically under refinement.
    """
    base = estimate_gain(problem, ctrl, t, xi, T_trunc + t, dt, N, seed,
                         include_tail=False)
    time_rows = []
    for delta in deltas:
        jd = estimate_gain(problem, ctrl, t + delta, xi, T_trunc + t + delta,
                           dt, N, seed, include_tail=False)
        time_rows.append((float(delta), abs(jd.value - base.value)))

    lip_rows = []
    for eps in eps_list:
        je = estimate_gain(problem, ctrl, t, shifted(xi, eps), T_trunc + t,
                           dt, N, seed, include_tail=False)
        w1 = abs(eps)  # translation moves every atom by exactly eps
        lip_rows.append((float(eps), w1, abs(je.value - base.value) / w1))

    ratios = [r for _, _, r in sorted(lip_rows, key=lambda row: -row[0])]
    blowup = all(ratios[i + 1] > 1.5 * ratios[i] for i in range(len(ratios) - 1)) \
        if len(ratios) > 1 else False
    return ContinuityTable(time_rows=tuple(time_rows),
                           lipschitz_rows=tuple(lip_rows),
                           blowup_flag=blowup)
