"""Problem instances: coefficient containers, hypothesis checks, benchmarks.

An ``SDEProblem`` bundles the drift b(x, mu, a), diffusion sigma(x, mu, a)
and running gain f(x, mu, a) together with the constants under which they
were declared admissible (Lipschitz L, growth M, gain growth K or bound
C_f, discount beta, Hoelder data (H, gamma1, gamma2)). The measure enters
the coefficients only through a declared summary (mean, second moment, or
the full empirical measure), which lets the simulator skip all-pairs
interactions for the moment-coupled instances used here.

Shipped families:

* ``lq_problem`` -- scalar linear-quadratic mean-field benchmark, with a
  closed-form value oracle (``lq_reference``, algebraic Riccati roots) and
  an independent oracle (``lq_policy_search``, numerical gain search over
  the deterministic mean/variance ODE system).
* ``counterexample_problem`` -- drift-only finite-horizon problem whose
  terminal cost is the modified relative entropy against the two-atom
  target; shrinking the control class to post-t information strictly
  worsens its value.
* ``bounded_problem`` -- a bounded-gain instance exercising the bounded
  truncation certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

from . import rng
from .control import ActionBox
from .measures import DEFAULT_Q, EmpiricalMeasure, entropy_h, relative_entropy, wasserstein2

__all__ = [
    "SDEProblem",
    "LQSpec",
    "LQReference",
    "CounterexampleProblem",
    "HypothesisError",
    "HypothesisReport",
    "Violation",
    "validate_hypotheses",
    "counterexample_problem",
    "lq_problem",
    "lq_reference",
    "lq_policy_value",
    "lq_policy_search",
    "bounded_problem",
    "static_problem",
    "problem_from_toml",
]


class HypothesisError(ValueError):
    """Raised when an operation requires a hypothesis the problem violates."""


@dataclass(frozen=True)
class SDEProblem:
    """Coefficient container for the controlled mean-field dynamics.

    b, sigma, f are vectorized over particles: given x of shape (N, d),
    actions of shape (N, q) and the declared measure summary they return
    (N, d), (N, d, m) and (N,) arrays respectively.
    """

    d: int
    m: int
    action_set: ActionBox
    b: Callable
    sigma: Callable
    f: Callable
    beta: float
    L: float
    M: float
    K: Optional[float] = None       # quadratic gain growth constant
    C_f: Optional[float] = None     # bounded gain constant (alternative)
    H: Optional[float] = None       # Hoelder constant of f in (x, mu)
    gamma1: float = 1.0
    gamma2: float = 1.0
    measure_arg: str = "mean"       # "mean" | "second_moment" | "measure"
    label: str = "problem"
    hypothesis_flags: tuple = field(default=())

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not (0 < self.gamma1 <= 1 and 0 < self.gamma2 <= 1):
            raise ValueError("gamma1, gamma2 must lie in (0, 1]")
        if self.measure_arg not in ("mean", "second_moment", "measure"):
            raise ValueError(f"unknown measure_arg {self.measure_arg!r}")
        flags = list(self.hypothesis_flags)
        if self.K is not None:
            strong = 18.0 * self.M**2 + 2.0
            weak = 12.0 * self.M**2 + 1.0
            if self.beta <= weak:
                flags.append(
                    f"beta={self.beta:g} <= 12M^2+1={weak:g}: discounted gain may be ill-defined"
                )
            elif self.beta <= strong:
                flags.append(
                    f"warning: beta={self.beta:g} in ({weak:g}, {strong:g}]; finiteness holds "
                    "but the stronger bound used by the disintegration estimates fails"
                )
        object.__setattr__(self, "hypothesis_flags", tuple(flags))

    @property
    def gain_kind(self) -> str:
        if self.C_f is not None:
            return "bounded"
        if self.K is not None:
            return "quadratic"
        return "none"

    def summary_of(self, mu: EmpiricalMeasure):
        """Project an empirical measure onto the declared coefficient input."""
        if self.measure_arg == "mean":
            return mu.mean()
        if self.measure_arg == "second_moment":
            return float(np.sqrt(mu.weights @ np.sum(mu.points**2, axis=1)))
        return mu

    def summary_of_points(self, points: np.ndarray):
        """Same as ``summary_of`` for a uniform cloud given as an array."""
        if self.measure_arg == "mean":
            return points.mean(axis=0)
        if self.measure_arg == "second_moment":
            return float(np.sqrt(np.mean(np.sum(points**2, axis=1))))
        return EmpiricalMeasure.from_points(points)


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass(frozen=True)
class Violation:
    check: str
    lhs: float
    rhs: float
    witness: dict


@dataclass(frozen=True)
class HypothesisReport:
    problem: str
    samples: int
    seed: int
    violations: tuple
    warnings: tuple

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0


def _random_measure(gen: np.random.Generator, d: int, scale: float) -> EmpiricalMeasure:
    n = int(gen.integers(3, 9))
    return EmpiricalMeasure.from_points(scale * gen.standard_normal((n, d)))


def validate_hypotheses(
    p: SDEProblem,
    samples: int = 200,
    seed: int = 0,
    probe_scale: float = 2.0,
    rtol: float = 1e-9,
) -> HypothesisReport:
    """Spot-check the declared constants on random (x, x', mu, mu', a) tuples.

    Checks the Lipschitz bound on (b, sigma), the linear growth bound, the
    gain growth (quadratic with K or bounded with C_f) and, when Hoelder
    data is declared, the local Hoelder bound on f. Report-valued: every
    violated inequality is returned with its witness, nothing raises.
    """
    gen = rng.stream(seed, "probe")
    grid = p.action_set.grid(min(p.action_set.grid_resolution, 21))
    violations: list[Violation] = []

    def fr(mat):  # Frobenius norm per particle
        return float(np.sqrt(np.sum(np.asarray(mat, dtype=float) ** 2)))

    for _ in range(samples):
        x = probe_scale * gen.standard_normal((1, p.d))
        x2 = probe_scale * gen.standard_normal((1, p.d))
        mu = _random_measure(gen, p.d, probe_scale)
        mu2 = _random_measure(gen, p.d, probe_scale)
        a = grid[int(gen.integers(len(grid)))][None, :]
        sm, sm2 = p.summary_of(mu), p.summary_of(mu2)
        w2 = wasserstein2(mu, mu2)
        norm_mu = float(np.sqrt(mu.weights @ np.sum(mu.points**2, axis=1)))
        norm_mu2 = float(np.sqrt(mu2.weights @ np.sum(mu2.points**2, axis=1)))

        b1, b2 = p.b(x, sm, a)[0], p.b(x2, sm2, a)[0]
        s1, s2 = p.sigma(x, sm, a)[0], p.sigma(x2, sm2, a)[0]
        dx = float(np.sqrt(np.sum((x - x2) ** 2)))
        lhs = fr(b1 - b2) + fr(s1 - s2)
        rhs = p.L * (dx + w2)
        if lhs > rhs * (1 + rtol) + 1e-12:
            violations.append(Violation("lipschitz_b_sigma", lhs, rhs,
                                        {"x": x.tolist(), "x2": x2.tolist(), "W2": w2,
                                         "a": a.tolist()}))

        lhs = fr(b1) + fr(s1)
        rhs = p.M * (1.0 + float(np.sqrt(np.sum(x**2))) + norm_mu)
        if lhs > rhs * (1 + rtol) + 1e-12:
            violations.append(Violation("growth_b_sigma", lhs, rhs,
                                        {"x": x.tolist(), "norm_mu": norm_mu, "a": a.tolist()}))

        f1 = float(p.f(x, sm, a)[0])
        if p.gain_kind == "quadratic":
            rhs = p.K * (1.0 + float(np.sum(x**2)) + norm_mu**2)
            if abs(f1) > rhs * (1 + rtol) + 1e-12:
                violations.append(Violation("growth_f_quadratic", abs(f1), rhs,
                                            {"x": x.tolist(), "norm_mu": norm_mu}))
        elif p.gain_kind == "bounded":
            if abs(f1) > p.C_f * (1 + rtol) + 1e-12:
                violations.append(Violation("bounded_f", abs(f1), p.C_f, {"x": x.tolist()}))

        if p.H is not None:
            f2 = float(p.f(x2, sm2, a)[0])
            nx, nx2 = float(np.sqrt(np.sum(x**2))), float(np.sqrt(np.sum(x2**2)))
            rhs = p.H * (dx**p.gamma1 * (1 + nx + nx2) ** (2 - p.gamma1)
                         + w2**p.gamma2 * (1 + norm_mu + norm_mu2) ** (2 - p.gamma2))
            if abs(f1 - f2) > rhs * (1 + rtol) + 1e-12:
                violations.append(Violation("hoelder_f", abs(f1 - f2), rhs,
                                            {"x": x.tolist(), "x2": x2.tolist(), "W2": w2}))

    return HypothesisReport(
        problem=p.label,
        samples=samples,
        seed=seed,
        violations=tuple(violations),
        warnings=tuple(p.hypothesis_flags),
    )


# ---------------------------------------------------------------------------
# counterexample: drift-only dynamics, entropy terminal cost


@dataclass(frozen=True)
class CounterexampleProblem:
    """Finite-horizon bundle: dX = alpha dt on [t, 1], terminal entropy cost.

    The terminal cost H(. | nu_hat) against nu_hat = (delta_{1-t} +
    delta_{t-1})/2 is strictly minimized at nu_hat itself; only controls
    that read the Brownian noise before t can randomize the terminal law
    onto both atoms, so restricting to post-t information costs exactly
    (h(0) + h(2))/2 = log 2.
    """

    problem: SDEProblem
    t: float
    T: float
    nu_hat: EmpiricalMeasure
    Q: float

    def terminal_cost(self, mu: EmpiricalMeasure) -> float:
        return relative_entropy(mu, self.nu_hat, h=entropy_h, Q=self.Q)

    def terminal_gain(self, mu: EmpiricalMeasure) -> float:
        # costs are stored as negative gains so one maximization path
        # serves the whole toolkit
        return -self.terminal_cost(mu)


def counterexample_problem(t: float, Q: float = DEFAULT_Q) -> CounterexampleProblem:
    """The class-restriction counterexample at initial time t in (0, 1/2)."""
    if not 0.0 < t < 0.5:
        raise ValueError(f"need t in (0, 1/2), got {t}")

    def b(x, sm, a):
        return a[:, :1]

    def sigma(x, sm, a):
        return np.zeros((x.shape[0], 1, 1))

    def f(x, sm, a):
        return np.zeros(x.shape[0])

    prob = SDEProblem(
        d=1, m=1,
        action_set=ActionBox([-1.0], [1.0]),
        b=b, sigma=sigma, f=f,
        beta=1.0, L=0.0, M=1.0, C_f=0.0,
        H=0.0, gamma1=1.0, gamma2=1.0,
        measure_arg="mean",
        label=f"counterexample(t={t:g})",
    )
    nu_hat = EmpiricalMeasure(np.array([[1.0 - t], [t - 1.0]]), np.array([0.5, 0.5]))
    return CounterexampleProblem(problem=prob, t=t, T=1.0, nu_hat=nu_hat, Q=Q)


# ---------------------------------------------------------------------------
# linear-quadratic mean-field benchmark


@dataclass(frozen=True)
class LQSpec:
    """dX = (a X + abar mean + b alpha) dt + sigma dB,
    running gain f = -(q x^2 + qbar mean^2 + r alpha^2), discount beta."""

    a: float = -0.3
    abar: float = 0.1
    b: float = 0.25
    sigma: float = 0.2
    q: float = 0.5
    qbar: float = 0.25
    r: float = 0.5
    beta: float = 6.0
    a_max: float = 1.0

    def __post_init__(self):
        if self.q < 0 or self.r <= 0 or self.sigma < 0:
            raise ValueError("need q >= 0, r > 0, sigma >= 0")


def lq_problem(spec: LQSpec = LQSpec()) -> SDEProblem:
    """Build the SDEProblem for an LQ spec with its exact constants."""
    s = spec

    def b(x, mean, a):
        m0 = float(np.atleast_1d(mean)[0])
        return (s.a * x[:, 0] + s.abar * m0 + s.b * a[:, 0])[:, None]

    def sigma(x, mean, a):
        return np.full((x.shape[0], 1, 1), s.sigma)

    def f(x, mean, a):
        m0 = float(np.atleast_1d(mean)[0])
        return -(s.q * x[:, 0] ** 2 + s.qbar * m0**2 + s.r * a[:, 0] ** 2)

    L = max(abs(s.a), abs(s.abar))
    M = max(abs(s.a), abs(s.abar), abs(s.b) * s.a_max + s.sigma)
    K = max(s.q, s.qbar, s.r * s.a_max**2)
    H = max(s.q, s.qbar)
    return SDEProblem(
        d=1, m=1,
        action_set=ActionBox([-s.a_max], [s.a_max]),
        b=b, sigma=sigma, f=f,
        beta=s.beta, L=L, M=M, K=K, H=H, gamma1=1.0, gamma2=1.0,
        measure_arg="mean",
        label="lq",
    )


@dataclass(frozen=True)
class LQReference:
    """Closed-form value v(mu) = k_var Var(mu) + k_mean mean(mu)^2 + c
    with optimal feedback alpha*(x, mu) = k1 x + k2 mean(mu)."""

    k_var: float
    k_mean: float
    c: float
    k1: float
    k2: float
    spec: LQSpec

    def value(self, mu: EmpiricalMeasure) -> float:
        m = float(mu.mean()[0])
        return self.k_var * mu.variance() + self.k_mean * m**2 + self.c


def _riccati_root(spec: LQSpec, drift: float, weight: float) -> float:
    """Positive root of (b^2/r) P^2 + (beta - 2 drift) P - weight = 0."""
    lin = spec.beta - 2.0 * drift
    if spec.b == 0.0:
        if lin <= 0:
            raise HypothesisError("no stabilizing root: beta <= 2*drift with b = 0")
        return weight / lin
    qa = spec.b**2 / spec.r
    disc = lin**2 + 4.0 * qa * weight
    P = (-lin + math.sqrt(disc)) / (2.0 * qa)
    if spec.beta - 2.0 * (drift - qa * P) <= 0:
        raise HypothesisError("no stabilizing root: closed loop dominates the discount")
    return P


def lq_reference(spec: LQSpec = LQSpec()) -> LQReference:
    """Value coefficients and feedback gains from the scalar Riccati roots.

    The problem splits into the deviation part (x - mean, weight q, noise
    sigma) and the mean part (weight q + qbar, noiseless); each is a
    scalar discounted LQ regulator whose cost-to-go coefficient solves a
    quadratic algebraic Riccati equation.
    """
    P_y = _riccati_root(spec, spec.a, spec.q)
    P_m = _riccati_root(spec, spec.a + spec.abar, spec.q + spec.qbar)
    k1 = -spec.b * P_y / spec.r
    k2 = -spec.b * (P_m - P_y) / spec.r
    return LQReference(
        k_var=-P_y,
        k_mean=-P_m,
        c=-P_y * spec.sigma**2 / spec.beta,
        k1=k1, k2=k2, spec=spec,
    )


def lq_policy_value(
    spec: LQSpec,
    k1: float,
    k2: float,
    var0: float,
    mean0: float,
    horizon: Optional[float] = None,
    rtol: float = 1e-11,
) -> float:
    """Discounted gain of the feedback a = k1 x + k2 mean, by ODE integration.

    Under a linear feedback the variance/mean pair is a closed ODE system;
    the discounted running gain is accumulated as a third component and
    integrated numerically over a horizon long enough for the tail to be
    negligible. Independent of the Riccati algebra.
    """
    g_var = spec.a + spec.b * k1
    g_mean = spec.a + spec.abar + spec.b * (k1 + k2)
    if horizon is None:
        decay = min(spec.beta, spec.beta - 2 * g_var, spec.beta - 2 * g_mean)
        if decay <= 0:
            raise HypothesisError("policy value diverges: growth outruns the discount")
        horizon = max(40.0 / decay, 10.0)

    def rhs(s, y):
        V, m, _ = y
        cost = (spec.q * (V + m**2) + spec.qbar * m**2
                + spec.r * (k1**2 * V + (k1 + k2) ** 2 * m**2))
        return [2.0 * g_var * V + spec.sigma**2,
                g_mean * m,
                -math.exp(-spec.beta * s) * cost]

    sol = solve_ivp(rhs, (0.0, horizon), [var0, mean0, 0.0],
                    rtol=rtol, atol=1e-14, method="RK45")
    if not sol.success:
        raise RuntimeError(f"policy evaluation ODE failed: {sol.message}")
    return float(sol.y[2, -1])


def lq_policy_search(
    spec: LQSpec,
    var0: float = 1.0,
    mean0: float = 1.0,
    x0: Sequence[float] = (0.0, 0.0),
) -> tuple[float, float, float]:
    """Best linear feedback by direct numerical search (Nelder-Mead).

    Returns (k1, k2, value at the probe initial condition). Serves as the
    long-horizon policy-evaluation oracle cross-validating the Riccati
    reference; shares none of its algebra.
    """
    res = minimize(
        lambda k: -lq_policy_value(spec, k[0], k[1], var0, mean0),
        x0=np.asarray(x0, dtype=float),
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 600},
    )
    k1, k2 = float(res.x[0]), float(res.x[1])
    return k1, k2, float(-res.fun)


# ---------------------------------------------------------------------------
# other shipped instances


def bounded_problem(beta: float = 0.8) -> SDEProblem:
    """Mean-reverting dynamics with a bounded running gain (cosine well)."""

    def b(x, mean, a):
        m0 = float(np.atleast_1d(mean)[0])
        return (-0.3 * x[:, 0] + 0.05 * m0 + 0.1 * a[:, 0])[:, None]

    def sigma(x, mean, a):
        return np.full((x.shape[0], 1, 1), 0.2)

    def f(x, mean, a):
        return np.cos(x[:, 0]) - 0.1 * a[:, 0] ** 2

    return SDEProblem(
        d=1, m=1,
        action_set=ActionBox([-1.0], [1.0]),
        b=b, sigma=sigma, f=f,
        beta=beta, L=0.3, M=0.35, C_f=1.1,
        H=1.0, gamma1=1.0, gamma2=1.0,
        measure_arg="mean",
        label="bounded",
    )


def static_problem(beta: float = 1.0, gain: Optional[Callable] = None,
                   label: str = "static") -> SDEProblem:
    """b = sigma = 0: the state never moves. Useful closed-form anchor."""

    def b(x, sm, a):
        return np.zeros_like(x)

    def sigma(x, sm, a):
        return np.zeros((x.shape[0], x.shape[1], 1))

    def f(x, sm, a):
        if gain is None:
            return np.ones(x.shape[0])
        return gain(x, sm, a)

    return SDEProblem(
        d=1, m=1,
        action_set=ActionBox([-1.0], [1.0]),
        b=b, sigma=sigma, f=f,
        beta=beta, L=0.0, M=0.01, K=1.0,
        H=1.0, gamma1=1.0, gamma2=1.0,
        measure_arg="mean",
        label=label,
    )


# ---------------------------------------------------------------------------
# TOML descriptors


def _poly_problem(tbl: dict) -> SDEProblem:
    """Scalar polynomial family: b = b0 + bx x + bm mean + ba a,
    sigma = s0 + sx x, f = f0 + fx x + fxx x^2 + fm mean + fmm mean^2
    + fa a + faa a^2."""
    g = lambda k: float(tbl.get(k, 0.0))
    b0, bx, bm, ba = g("b0"), g("bx"), g("bm"), g("ba")
    s0, sx = g("s0"), g("sx")
    f0, fx, fxx, fm, fmm, fa, faa = (g("f0"), g("fx"), g("fxx"), g("fm"),
                                     g("fmm"), g("fa"), g("faa"))
    a_max = float(tbl.get("a_max", 1.0))

    def b(x, mean, a):
        m0 = float(np.atleast_1d(mean)[0])
        return (b0 + bx * x[:, 0] + bm * m0 + ba * a[:, 0])[:, None]

    def sigma(x, mean, a):
        return (s0 + sx * x[:, 0])[:, None, None]

    def f(x, mean, a):
        m0 = float(np.atleast_1d(mean)[0])
        return (f0 + fx * x[:, 0] + fxx * x[:, 0] ** 2 + fm * m0 + fmm * m0**2
                + fa * a[:, 0] + faa * a[:, 0] ** 2)

    L = float(tbl.get("L", max(abs(bx), abs(bm)) + abs(sx)))
    M = float(tbl.get("M", max(abs(bx), abs(bm), abs(b0) + abs(ba) * a_max + abs(s0)) + abs(sx)))
    K = float(tbl.get("K", max(abs(fxx), abs(fmm),
                               abs(f0) + abs(fx) + abs(fm) + (abs(fa) + abs(faa)) * a_max)))
    return SDEProblem(
        d=1, m=1,
        action_set=ActionBox([-a_max], [a_max]),
        b=b, sigma=sigma, f=f,
        beta=float(tbl.get("beta", 6.0)), L=L, M=M, K=K,
        H=tbl.get("H"), gamma1=float(tbl.get("gamma1", 1.0)),
        gamma2=float(tbl.get("gamma2", 1.0)),
        measure_arg="mean",
        label=str(tbl.get("label", "custom_poly")),
    )


def problem_from_toml(tbl: dict):
    """Build a problem (or counterexample bundle) from a parsed TOML table."""
    family = tbl.get("family")
    if family == "lq":
        keys = ("a", "abar", "b", "sigma", "q", "qbar", "r", "beta", "a_max")
        spec = LQSpec(**{k: float(tbl[k]) for k in keys if k in tbl})
        return lq_problem(spec)
    if family == "counterexample":
        return counterexample_problem(float(tbl["t"]), Q=float(tbl.get("Q", DEFAULT_Q)))
    if family == "bounded":
        return bounded_problem(beta=float(tbl.get("beta", 0.8)))
    if family == "custom_poly":
        return _poly_problem(tbl)
    raise ValueError(f"unknown problem family {family!r}")
