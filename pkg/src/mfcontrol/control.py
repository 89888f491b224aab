"""Control policy representations and the shifting / path-scaling maps.

Three policy shapes cover everything the toolkit needs:

* ``Constant`` -- a fixed action.
* ``Feedback`` -- a rule of (time, state, measure summary).
* ``OpenLoop`` -- a rule of (time, recorded driving path, U). A Full-class
  policy reads the raw Brownian values from time 0; a policy restricted
  from time t is structurally handed only the increment path
  (B_s - B_t)_{s >= t}, so it cannot depend on the noise before t.

``shift_forward`` maps a Full-class rule into the class restricted from t
by translating its clock, and ``shift_backward`` inverts it; with matched
increment noise the two directions replay each other's decisions exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "ActionBox",
    "Constant",
    "Feedback",
    "OpenLoop",
    "ControlPolicy",
    "shift_forward",
    "shift_backward",
    "scale_path",
    "scale_path_inverse",
    "counterexample_optimal_control",
    "delayed",
    "linear_feedback",
]


@dataclass(frozen=True)
class ActionBox:
    """Compact box A = prod_k [lows_k, highs_k] with an evaluation grid."""

    lows: np.ndarray
    highs: np.ndarray
    grid_resolution: int = 101

    def __post_init__(self):
        lows = np.atleast_1d(np.asarray(self.lows, dtype=float))
        highs = np.atleast_1d(np.asarray(self.highs, dtype=float))
        if lows.shape != highs.shape or np.any(lows > highs):
            raise ValueError("invalid action box bounds")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @property
    def dim(self) -> int:
        return self.lows.shape[0]

    def clamp(self, a: np.ndarray) -> tuple[np.ndarray, int]:
        """Project actions into the box; returns (clamped, #entries clamped)."""
        clipped = np.clip(a, self.lows, self.highs)
        return clipped, int(np.sum(clipped != a))

    def grid(self, resolution: Optional[int] = None) -> np.ndarray:
        """(G, q) evaluation grid; cartesian product across action dims."""
        res = self.grid_resolution if resolution is None else resolution
        axes = [np.linspace(lo, hi, res) if hi > lo else np.array([lo])
                for lo, hi in zip(self.lows, self.highs)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class Constant:
    a: np.ndarray
    label: str = "constant"

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))


@dataclass(frozen=True)
class Feedback:
    """rule(s, x, mu_summary) -> actions, vectorized over the particle axis of x."""

    rule: Callable[[float, np.ndarray, object], np.ndarray]
    label: str = "feedback"


@dataclass(frozen=True)
class OpenLoop:
    """Path functional control  a = rule(s, path, u).

    ``path`` is a (k+1, N, m) array of recorded driving-path values up to
    the current step. Full class (restricted_from is None): raw values
    from time 0. Restricted from t: increment values (B - B_t) on [t, s],
    index 0 <-> time t. ``u`` is the (N,) randomization variable.
    """

    rule: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    restricted_from: Optional[float] = None
    label: str = "open_loop"


ControlPolicy = Union[Constant, Feedback, OpenLoop]


def shift_forward(ctrl: ControlPolicy, t: float) -> ControlPolicy:
    """Shift a Full-class policy forward to the class restricted from t.

    The shifted rule evaluates the original at local clock s - t on the
    increment path, so running it from start time t with matched
    increment noise replays the original run from time 0 pathwise.
    Constants and feedback rules are clock-free and pass through.
    """
    if isinstance(ctrl, (Constant, Feedback)):
        return ctrl
    if ctrl.restricted_from is not None:
        raise ValueError("shift_forward expects a Full-class open-loop policy")
    base = ctrl.rule

    def rule(s, path, u):
        return base(s - t, path, u)

    return OpenLoop(rule, restricted_from=t, label=f"{ctrl.label}>>+{t:g}")


def shift_backward(ctrl: ControlPolicy, t: float) -> ControlPolicy:
    """Inverse of ``shift_forward``: bring a restricted-from-t policy to Full."""
    if isinstance(ctrl, (Constant, Feedback)):
        return ctrl
    if ctrl.restricted_from is None:
        raise ValueError("shift_backward expects a policy restricted from some t")
    base = ctrl.rule

    def rule(s, path, u):
        return base(s + t, path, u)

    return OpenLoop(rule, restricted_from=None, label=f"{ctrl.label}<<-{t:g}")


def scale_path(values: np.ndarray, t: float, u: float, dt: float) -> np.ndarray:
    """Stretch a path recorded on [t, u] into one on [0, u].

    w(s) = v(t + s (u-t)/u) * sqrt(u/(u-t)), resampled on the uniform
    grid of [0, u] by linear interpolation; maps a standard Brownian
    motion on [t, u] to one on [0, u].
    """
    if u <= t or t < 0:
        raise ValueError(f"need 0 <= t < u, got t={t}, u={u}")
    values = np.asarray(values, dtype=float)
    n_in = values.shape[0]
    grid_in = t + dt * np.arange(n_in)
    n_out = int(round(u / dt)) + 1
    s_out = dt * np.arange(n_out)
    q = t + s_out * (u - t) / u
    q = np.clip(q, grid_in[0], grid_in[-1])
    flat = values.reshape(n_in, -1)
    out = np.empty((n_out, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(q, grid_in, flat[:, j])
    return out.reshape((n_out,) + values.shape[1:]) * np.sqrt(u / (u - t))


def scale_path_inverse(values: np.ndarray, t: float, u: float, dt: float) -> np.ndarray:
    """Invert ``scale_path``: compress a path on [0, u] back onto [t, u]."""
    if u <= t or t < 0:
        raise ValueError(f"need 0 <= t < u, got t={t}, u={u}")
    values = np.asarray(values, dtype=float)
    n_in = values.shape[0]
    grid_in = dt * np.arange(n_in)
    n_out = int(round((u - t) / dt)) + 1
    z_out = t + dt * np.arange(n_out)
    q = (z_out - t) * u / (u - t)
    q = np.clip(q, grid_in[0], grid_in[-1])
    flat = values.reshape(n_in, -1)
    out = np.empty((n_out, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(q, grid_in, flat[:, j])
    return out.reshape((n_out,) + values.shape[1:]) * np.sqrt((u - t) / u)


def counterexample_optimal_control(t: float, dt: float) -> OpenLoop:
    """Full-class policy a = +1 if B_{t/2} >= 0 else -1.

    Reads the stored Brownian value at time t/2 (which must sit on the
    dt grid); only meaningful for dynamics started at or after t.
    """
    if not 0.0 < t < 0.5:
        raise ValueError(f"need t in (0, 1/2), got {t}")
    idx = int(round((t / 2.0) / dt))
    if abs(idx * dt - t / 2.0) > 1e-9:
        raise ValueError(f"t/2 = {t/2} is not on the dt = {dt} grid")

    def rule(s, path, u):
        return np.where(path[idx, :, 0] >= 0.0, 1.0, -1.0)

    return OpenLoop(rule, restricted_from=None, label="sign_B_half_t")


def delayed(ctrl: OpenLoop, t: float, fill: float = 0.0) -> OpenLoop:
    """Act like ``ctrl`` from time t on; emit the fill action before t.

    Used to run a policy that reads the noise on [0, t] from start time 0
    without peeking: before t it outputs ``fill`` and reads nothing.
    """
    base = ctrl.rule

    def rule(s, path, u):
        if s < t - 1e-12:
            return np.full(path.shape[1], fill)
        return base(s, path, u)

    return OpenLoop(rule, restricted_from=ctrl.restricted_from,
                    label=f"{ctrl.label}@>={t:g}")


def linear_feedback(k1: float, k2: float, label: Optional[str] = None) -> Feedback:
    """Scalar feedback a = k1 x + k2 mean(mu); needs measure summary 'mean'."""

    def rule(s, x, mu_mean):
        return k1 * x[:, 0] + k2 * float(np.atleast_1d(mu_mean)[0])

    return Feedback(rule, label=label or f"lin(k1={k1:.4g},k2={k2:.4g})")
