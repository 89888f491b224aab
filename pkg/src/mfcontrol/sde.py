"""Interacting-particle Euler-Maruyama simulation of the controlled dynamics.

One explicit Euler step per grid interval; every particle sees the
same-step empirical law (synchronous coupling). Brownian increments come
from counter-based streams keyed by purpose and step, with the dynamics
increments indexed relative to the start time: two runs sharing a seed
but starting at different times are driven by bit-identical increments
at matching local steps, which is what makes the control-shifting
couplings exact rather than statistical.

The full driving path from time 0 is materialized whenever the control
is a path functional: a pre-start stub is generated (or injected) so
policies may read the noise before the dynamics begins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .control import Constant, ControlPolicy, Feedback, OpenLoop
from .measures import EmpiricalMeasure
from .problems import SDEProblem

__all__ = [
    "ParticlePaths",
    "InitialCondition",
    "BlowUpError",
    "simulate",
    "euler_run",
    "check_moment_bound",
    "MomentBoundReport",
    "dirac",
    "gaussian",
    "from_quantile",
    "from_measure",
    "antithetic",
    "negated",
]

BLOWUP_GUARD = 1.0e9
_GRID_TOL = 1e-9


class BlowUpError(RuntimeError):
    """A particle left the guard region; carries the offending step."""

    def __init__(self, step: int, time: float):
        super().__init__(f"state blow-up at step {step} (t = {time:g}): |X| > {BLOWUP_GUARD:g}")
        self.step = step
        self.time = time


# ---------------------------------------------------------------------------
# initial conditions (sampled from the randomization variable U only)


@dataclass(frozen=True)
class InitialCondition:
    """Initial state sampled from the per-particle uniform U alone.

    The sampler maps the (N,) vector of uniforms to an (N, d) state
    array; because it never sees the Brownian path, measurability with
    respect to the pre-noise sigma-algebra holds by construction.
    """

    sampler: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"


def dirac(x, d: int = 1) -> InitialCondition:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (d,):
        x = np.full(d, float(x[0])) if x.size == 1 else x
    return InitialCondition(lambda u: np.tile(x, (len(u), 1)), label=f"dirac({x.tolist()})")


def gaussian(mean: float = 0.0, std: float = 1.0) -> InitialCondition:
    from scipy.special import ndtri

    def sampler(u):
        return (mean + std * ndtri(np.clip(u, 1e-12, 1 - 1e-12)))[:, None]

    return InitialCondition(sampler, label=f"gaussian({mean:g},{std:g})")


def from_quantile(q: Callable[[np.ndarray], np.ndarray], label: str = "quantile") -> InitialCondition:
    """xi = q(U) for a scalar quantile function q."""
    return InitialCondition(lambda u: np.asarray(q(u), dtype=float).reshape(len(u), 1), label)


def from_measure(mu: EmpiricalMeasure) -> InitialCondition:
    """Resample atoms of an empirical measure: law(xi) = mu exactly."""
    cum = np.cumsum(mu.weights)

    def sampler(u):
        idx = np.searchsorted(cum, u, side="right")
        idx = np.minimum(idx, mu.size - 1)
        return mu.points[idx]

    return InitialCondition(sampler, label=f"from_measure(n={mu.size})")


def antithetic(ic: InitialCondition) -> InitialCondition:
    """Same law, reflected uniforms: xi = sampler(1 - U)."""
    return InitialCondition(lambda u: ic.sampler(1.0 - u), label=f"antithetic({ic.label})")


def negated(ic: InitialCondition) -> InitialCondition:
    return InitialCondition(lambda u: -ic.sampler(u), label=f"negated({ic.label})")


# ---------------------------------------------------------------------------
# recorded paths


@dataclass
class ParticlePaths:
    """Recorded simulation output on the uniform grid of [0, T].

    The grid always starts at time 0 even when the dynamics starts later:
    rows before ``t0_index`` hold the initial state (frozen) and the
    pre-start Brownian stub. ``brownian`` row 0 is identically zero.
    """

    grid: np.ndarray           # (K+1,)
    t0_index: int
    states: np.ndarray         # (K+1, N, d)
    brownian: Optional[np.ndarray]  # (K+1, N, m); None when no path was needed
    uniforms: np.ndarray       # (N,)
    second_moments: np.ndarray  # (K+1,) empirical E|X|^2 at each node
    actions: Optional[np.ndarray]   # (K, N, q) actions used on each step
    seed: int
    dt: float
    clamp_fraction: float
    problem_label: str = ""
    control_label: str = ""

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def t0(self) -> float:
        return float(self.grid[self.t0_index])

    def law_at(self, index: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_points(self.states[index])

    def terminal_law(self) -> EmpiricalMeasure:
        return self.law_at(len(self.grid) - 1)


def _grid_index(t: float, dt: float, what: str) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > _GRID_TOL:
        raise ValueError(f"{what} = {t!r} is not on the dt = {dt!r} grid")
    return k


def _as_actions(a, n: int, q: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full((n, q), float(a))
    if a.ndim == 1:
        if a.shape == (q,) and q != n:
            return np.tile(a, (n, 1))
        return a[:, None]
    return a


def euler_run(
    problem: SDEProblem,
    ctrl: ControlPolicy,
    t0: float,
    xi: InitialCondition,
    T: float,
    dt: float,
    N: int,
    seed: int,
    *,
    keep_states: bool = True,
    keep_brownian: Optional[bool] = None,
    frozen_summaries: Optional[Sequence] = None,
    stub_override: Optional[np.ndarray] = None,
    accumulate_gain: bool = False,
) -> dict:
    """Core Euler loop; returns a plain dict of whatever was recorded.

    frozen_summaries: measure summaries per dynamics node (decoupled run
    against a frozen flow) instead of the live empirical law.
    stub_override: (t0_index+1, N, m) Brownian values on [0, t0]
    replacing the generated stub (used by the disintegration check).
    accumulate_gain: per-particle discounted trapezoid of the running
    gain from t0 to T.
    """
    if dt <= 0 or N < 1 or T <= t0 + _GRID_TOL:
        raise ValueError("need dt > 0, N >= 1 and T > t0")
    K = _grid_index(T, dt, "T")
    k0 = _grid_index(t0, dt, "t0")
    grid = dt * np.arange(K + 1)
    d, m, q = problem.d, problem.m, problem.action_set.dim
    sqrt_dt = math.sqrt(dt)

    U = rng.uniforms(seed, N)
    x = np.asarray(xi.sampler(U), dtype=float).reshape(N, d).copy()

    is_open = isinstance(ctrl, OpenLoop)
    if keep_brownian is None:
        keep_brownian = is_open
    needs_path = is_open or keep_brownian
    rt_idx = None
    if is_open and ctrl.restricted_from is not None:
        rt_idx = _grid_index(ctrl.restricted_from, dt, "restricted_from")
        if rt_idx > k0:
            raise ValueError(
                f"policy restricted from t = {ctrl.restricted_from:g} cannot drive "
                f"dynamics started earlier at t0 = {t0:g}")

    brownian = np.zeros((K + 1, N, m)) if needs_path else None
    # increment path relative to the restriction time, built by direct
    # accumulation of the same increments (bit-identical to a path built
    # from time zero out of those increments)
    rel = np.zeros((K + 1 - rt_idx, N, m)) if rt_idx is not None else None

    # pre-start stub on [0, t0]
    if stub_override is not None:
        if stub_override.shape != (k0 + 1, N, m):
            raise ValueError(f"stub_override must have shape {(k0 + 1, N, m)}")
        if np.any(stub_override[0] != 0.0):
            raise ValueError("stub paths must start at 0")
        if brownian is not None:
            brownian[: k0 + 1] = stub_override
    elif needs_path:
        for k in range(k0):
            inc = rng.normal_block(seed, "stub", k, (N, m)) * sqrt_dt
            brownian[k + 1] = brownian[k] + inc
    if rel is not None and rt_idx < k0:
        rel[: k0 + 1 - rt_idx] = brownian[rt_idx : k0 + 1] - brownian[rt_idx]

    states = np.empty((K + 1, N, d)) if keep_states else None
    if keep_states:
        states[: k0 + 1] = x[None, :, :]
    actions = np.empty((K - k0, N, q)) if keep_states else None
    second_moments = np.empty(K + 1)
    second_moments[: k0 + 1] = float(np.mean(np.sum(x**2, axis=1)))

    gains = np.zeros(N) if accumulate_gain else None
    g_prev = None
    clamp_count = 0
    total_actions = 0
    last_a = None

    for k in range(k0, K):
        j = k - k0  # local dynamics step; keys the noise and the discount
        s = grid[k]
        if frozen_summaries is not None:
            summary = frozen_summaries[j]
        else:
            summary = problem.summary_of_points(x)

        if isinstance(ctrl, Constant):
            a = np.tile(ctrl.a, (N, 1))
        elif isinstance(ctrl, Feedback):
            a = _as_actions(ctrl.rule(s, x, summary), N, q)
        else:
            path = brownian[: k + 1] if rt_idx is None else rel[: k - rt_idx + 1]
            a = _as_actions(ctrl.rule(s, path, U), N, q)
        a, nclamp = problem.action_set.clamp(a)
        clamp_count += nclamp
        total_actions += a.size
        last_a = a
        if actions is not None:
            actions[j] = a

        if accumulate_gain:
            g_node = math.exp(-problem.beta * (j * dt)) * problem.f(x, summary, a)
            if g_prev is not None:
                gains += 0.5 * dt * (g_prev + g_node)
            g_prev = g_node

        drift = problem.b(x, summary, a)
        inc = rng.normal_block(seed, "dyn", j, (N, m)) * sqrt_dt
        diffusion = np.einsum("ndm,nm->nd", np.asarray(problem.sigma(x, summary, a)), inc)
        x = x + dt * drift + diffusion

        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_GUARD:
            raise BlowUpError(k + 1, grid[k + 1])
        if brownian is not None:
            brownian[k + 1] = brownian[k] + inc
        if rel is not None:  # rt_idx <= k0 <= k here
            rel[k + 1 - rt_idx] = rel[k - rt_idx] + inc
        if keep_states:
            states[k + 1] = x
        second_moments[k + 1] = float(np.mean(np.sum(x**2, axis=1)))

    if accumulate_gain and K > k0:
        summary = (frozen_summaries[K - k0] if frozen_summaries is not None
                   else problem.summary_of_points(x))
        g_final = math.exp(-problem.beta * ((K - k0) * dt)) * problem.f(x, summary, last_a)
        gains += 0.5 * dt * (g_prev + g_final)

    return {
        "grid": grid,
        "t0_index": k0,
        "states": states,
        "final_states": x,
        "brownian": brownian,
        "uniforms": U,
        "second_moments": second_moments,
        "actions": actions,
        "gains": gains,
        "clamp_fraction": clamp_count / total_actions if total_actions else 0.0,
    }


def simulate(
    problem: SDEProblem,
    ctrl: ControlPolicy,
    t0: float,
    xi: InitialCondition,
    T: float,
    dt: float,
    N: int,
    seed: int,
    keep_brownian: Optional[bool] = None,
) -> ParticlePaths:
    """Simulate the controlled particle system and record everything.

    Identical arguments give bit-identical output (counter-based noise,
    fixed-order reductions), independently of worker count.
    """
    out = euler_run(problem, ctrl, t0, xi, T, dt, N, seed,
                    keep_states=True, keep_brownian=keep_brownian)
    ctrl_label = getattr(ctrl, "label", ctrl.__class__.__name__)
    return ParticlePaths(
        grid=out["grid"],
        t0_index=out["t0_index"],
        states=out["states"],
        brownian=out["brownian"],
        uniforms=out["uniforms"],
        second_moments=out["second_moments"],
        actions=out["actions"],
        seed=seed,
        dt=dt,
        clamp_fraction=out["clamp_fraction"],
        problem_label=problem.label,
        control_label=ctrl_label,
    )


# ---------------------------------------------------------------------------
# moment bound certification


@dataclass(frozen=True)
class MomentBoundReport:
    ok: bool
    max_ratio: float
    argmax_time: float
    slack: float
    violations: tuple

    def __str__(self):
        state = "ok" if self.ok else "VIOLATED"
        return (f"moment bound {state}: max ratio {self.max_ratio:.6g} "
                f"at t = {self.argmax_time:g} (slack {self.slack:g})")


def moment_bound(xi_norm: float, M: float, elapsed) -> np.ndarray:
    """Second-moment envelope (||xi||^2 + 6 M^2 tau) e^{(12 M^2 + 1) tau}."""
    tau = np.asarray(elapsed, dtype=float)
    return (xi_norm**2 + 6.0 * M**2 * tau) * np.exp((12.0 * M**2 + 1.0) * tau)


def check_moment_bound(
    paths: ParticlePaths,
    M: float,
    xi_norm: float,
    slack: float = 0.05,
) -> MomentBoundReport:
    """Compare empirical E|X_s|^2 against the a-priori envelope at every node.

    The envelope is evaluated with the declared growth constant M; the
    multiplicative slack absorbs Monte Carlo noise. Report-valued.
    """
    k0 = paths.t0_index
    tau = paths.grid[k0:] - paths.grid[k0]
    bounds = moment_bound(xi_norm, M, tau)
    emp = paths.second_moments[k0:]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bounds > 0, emp / bounds, np.where(emp <= 1e-300, 0.0, np.inf))
    worst = int(np.argmax(ratios))
    limit = 1.0 + slack
    viol = [
        {"time": float(paths.grid[k0 + i]), "empirical": float(emp[i]),
         "bound": float(bounds[i]), "ratio": float(ratios[i])}
        for i in np.nonzero(ratios > limit)[0]
    ]
    return MomentBoundReport(
        ok=len(viol) == 0,
        max_ratio=float(ratios[worst]),
        argmax_time=float(paths.grid[k0 + worst]),
        slack=slack,
        violations=tuple(viol),
    )
