"""Empirical probability measures with exact Wasserstein distances.

All measure-valued quantities in this package are finitely supported:
an ``EmpiricalMeasure`` is a weighted cloud of points in R^d standing in
for an element of the 2-Wasserstein space. At desk scale the W1/W2
distances are computed exactly (sorted quantiles in d=1, optimal
assignment or a transport LP in d>1) -- no entropic smoothing.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

__all__ = [
    "EmpiricalMeasure",
    "second_moment",
    "wasserstein1",
    "wasserstein2",
    "relative_entropy",
    "entropy_h",
    "DEFAULT_Q",
    "measure_to_csv",
    "measure_from_csv",
]

_WEIGHT_TOL = 1e-12
_SUPPORT_TOL = 1e-9
# Exact assignment is O(N^3); beyond this we refuse rather than approximate.
_ASSIGNMENT_LIMIT = 2048

#: Sentinel value returned by ``relative_entropy`` when the first measure
#: puts mass outside the support of the second. Must dominate every
#: finite divergence value that matters; configurable per call.
DEFAULT_Q = 1.0e6


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Finitely supported probability measure on R^d.

    points : (N, d) array of atom locations.
    weights : (N,) nonnegative array summing to 1; uniform when omitted.
    """

    points: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"points must be a nonempty (N, d) array, got shape {pts.shape}")
        w = self.weights
        if w is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(w, dtype=float)
            if w.shape != (pts.shape[0],):
                raise ValueError(f"weights shape {w.shape} does not match {pts.shape[0]} points")
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > _WEIGHT_TOL:
                raise ValueError(f"weights sum to {w.sum():.17g}, not 1 within {_WEIGHT_TOL}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.size, rtol=0.0, atol=_WEIGHT_TOL))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def variance(self) -> float:
        """Total variance: E|X|^2 - |E X|^2."""
        m = self.mean()
        return float(self.weights @ np.sum(self.points**2, axis=1) - m @ m)

    @staticmethod
    def dirac(x) -> "EmpiricalMeasure":
        return EmpiricalMeasure(np.atleast_2d(np.asarray(x, dtype=float)))

    @staticmethod
    def from_points(points) -> "EmpiricalMeasure":
        """Uniform measure on a point cloud (rows)."""
        return EmpiricalMeasure(np.atleast_2d(np.asarray(points, dtype=float)))


def second_moment(mu: EmpiricalMeasure) -> float:
    """||mu||_2 = (sum_i w_i |x_i|^2)^(1/2)."""
    return float(np.sqrt(mu.weights @ np.sum(mu.points**2, axis=1)))


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _quantile_cost_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: int) -> float:
    """Exact W_p^p in d=1 through the sorted-quantile (comonotone) coupling.

    Handles general weights by merging the two cumulative weight ladders.
    """
    xi = np.argsort(mu.points[:, 0], kind="stable")
    yi = np.argsort(nu.points[:, 0], kind="stable")
    x, wx = mu.points[xi, 0], mu.weights[xi]
    y, wy = nu.points[yi, 0], nu.weights[yi]
    cost = 0.0
    i = j = 0
    rx, ry = wx[0], wy[0]
    while True:
        m = min(rx, ry)
        if m > 0:
            cost += m * abs(x[i] - y[j]) ** p
        rx -= m
        ry -= m
        if rx <= _WEIGHT_TOL:
            i += 1
            if i >= len(x):
                break
            rx = wx[i]
        if ry <= _WEIGHT_TOL:
            j += 1
            if j >= len(y):
                break
            ry = wy[j]
    return cost


def _cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: int) -> np.ndarray:
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=2))
    return dist**p


def _transport_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: int) -> float:
    """Exact optimal transport cost for ground cost |x-y|^p."""
    if mu.dim == 1:
        return _quantile_cost_1d(mu, nu, p)
    C = _cost_matrix(mu, nu, p)
    if mu.is_uniform and nu.is_uniform and mu.size == nu.size:
        if mu.size > _ASSIGNMENT_LIMIT:
            raise ValueError(f"assignment limited to N <= {_ASSIGNMENT_LIMIT}, got {mu.size}")
        rows, cols = linear_sum_assignment(C)
        return float(C[rows, cols].mean())
    # General weights: transport LP. Drop one redundant marginal constraint.
    nm, nn = mu.size, nu.size
    A_eq = []
    for i in range(nm):
        row = np.zeros((nm, nn))
        row[i, :] = 1.0
        A_eq.append(row.ravel())
    for j in range(nn):
        row = np.zeros((nm, nn))
        row[:, j] = 1.0
        A_eq.append(row.ravel())
    A_eq = np.array(A_eq)[:-1]
    b_eq = np.concatenate([mu.weights, nu.weights])[:-1]
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact 2-Wasserstein distance between empirical measures."""
    _check_pair(mu, nu)
    return float(np.sqrt(max(_transport_cost(mu, nu, 2), 0.0)))


def wasserstein1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Exact 1-Wasserstein distance between empirical measures."""
    _check_pair(mu, nu)
    return float(_transport_cost(mu, nu, 1))


def entropy_h(y):
    """Divergence kernel h(y) = y log y + (1 - y); h(0) = 1, h(1) = 0.

    Continuous, strictly convex, nonnegative with unique minimum at 1.
    """
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0)
    out = ylogy + (1.0 - y)
    return float(out) if out.ndim == 0 else out


def relative_entropy(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    h: Callable = entropy_h,
    Q: float = DEFAULT_Q,
    support_tol: float = _SUPPORT_TOL,
) -> float:
    """Modified relative entropy of mu against a finitely supported nu.

    Returns ``Q`` whenever mu puts mass outside supp(nu) (atom matching is
    exact-coordinate within ``support_tol``); otherwise evaluates
    sum_j h(dmu/dnu(y_j)) nu({y_j}) over the atoms y_j of nu.
    """
    _check_pair(mu, nu)
    # Aggregate nu mass on coincident atoms first.
    ny, nw = _aggregate(nu.points, nu.weights, support_tol)
    mass_on = np.zeros(len(ny))
    for x, w in zip(mu.points, mu.weights):
        d = np.sqrt(np.sum((ny - x[None, :]) ** 2, axis=1))
        j = int(np.argmin(d))
        if d[j] <= support_tol:
            mass_on[j] += w
        elif w > _WEIGHT_TOL:
            return float(Q)
    dens = mass_on / nw
    return float(np.sum(np.asarray(h(dens)) * nw))


def _aggregate(points: np.ndarray, weights: np.ndarray, tol: float):
    """Merge atoms closer than tol (exact duplicates up to float noise)."""
    out_pts: list[np.ndarray] = []
    out_w: list[float] = []
    for x, w in zip(points, weights):
        for k, y in enumerate(out_pts):
            if np.sqrt(np.sum((x - y) ** 2)) <= tol:
                out_w[k] += w
                break
        else:
            out_pts.append(x)
            out_w.append(w)
    return np.array(out_pts), np.array(out_w)


def measure_to_csv(mu: EmpiricalMeasure) -> str:
    """Serialize as CSV rows (w, x1, ..., xd)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["w"] + [f"x{i+1}" for i in range(mu.dim)])
    for w, x in zip(mu.weights, mu.points):
        writer.writerow([repr(float(w))] + [repr(float(v)) for v in x])
    return buf.getvalue()


def measure_from_csv(text: str) -> EmpiricalMeasure:
    rows = list(csv.reader(io.StringIO(text)))
    body = rows[1:] if rows and rows[0] and rows[0][0] == "w" else rows
    data = np.array([[float(v) for v in row] for row in body if row])
    return EmpiricalMeasure(data[:, 1:], data[:, 0])
