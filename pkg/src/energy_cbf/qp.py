"""Exact solver for ``min ||u - u_nom||^2  s.t.  a.u >= b,  lower <= u <= upper``.

With multiplier ``lam >= 0`` on the halfspace, stationarity gives
``u(lam) = clip(u_nom + lam * a, lower, upper)``. The map
``phi(lam) = a.u(lam) - b`` is continuous, non-decreasing and piecewise
linear with breakpoints where a coordinate hits a bound, so the optimal
multiplier is found exactly by walking the sorted breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"


class DegenerateConstraintError(ValueError):
    """The constraint normal is (numerically) zero."""


@dataclass(frozen=True)
class QpProblem:
    u_nom: np.ndarray
    a: np.ndarray
    b: float
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        u_nom = np.asarray(self.u_nom, dtype=float).reshape(-1)
        a = np.asarray(self.a, dtype=float).reshape(-1)
        m = u_nom.size
        if a.size != m:
            raise ValueError(f"a has {a.size} entries, u_nom has {m}")
        lower = np.full(m, -np.inf) if self.lower is None else np.broadcast_to(
            np.asarray(self.lower, dtype=float), (m,)).copy()
        upper = np.full(m, np.inf) if self.upper is None else np.broadcast_to(
            np.asarray(self.upper, dtype=float), (m,)).copy()
        if not (np.all(np.isfinite(u_nom)) and np.all(np.isfinite(a)) and np.isfinite(self.b)):
            raise ValueError("u_nom, a and b must be finite")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
            raise ValueError("box bounds must satisfy lower <= upper")
        object.__setattr__(self, "u_nom", u_nom)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def boxed(self) -> bool:
        return bool(np.any(np.isfinite(self.lower)) or np.any(np.isfinite(self.upper)))


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    status: str
    kkt_residual: float
    multiplier: float = 0.0


def halfspace_projection(u_nom, a, b: float, eps: float = 1e-6) -> np.ndarray:
    """Closest point to ``u_nom`` in ``{u : a.u >= b}``."""
    u_nom = np.asarray(u_nom, dtype=float)
    a = np.asarray(a, dtype=float)
    norm2 = float(a @ a)
    if np.sqrt(norm2) <= eps:
        raise DegenerateConstraintError(f"|a| = {np.sqrt(norm2):.3g} <= {eps:g}")
    slack = b - float(a @ u_nom)
    if slack <= 0.0:
        return u_nom.copy()
    return u_nom + a * (slack / norm2)


def kkt_residual(problem: QpProblem, u, lam: float) -> float:
    """Worst violation of the KKT conditions at ``(u, lam)``.

    Box multipliers are recovered from the stationarity residual; their sign
    must match the bound each coordinate sits on.
    """
    p = problem
    u = np.asarray(u, dtype=float)
    scale = 1.0 + np.max(np.abs(p.u_nom)) + abs(lam) * np.max(np.abs(p.a), initial=0.0)
    r = u - p.u_nom - lam * p.a
    tol = 1e-12 * scale
    at_lo = u <= p.lower + tol
    at_hi = u >= p.upper - tol
    stat = np.where(at_lo & at_hi, 0.0,
                    np.where(at_lo, np.maximum(-r, 0.0),
                             np.where(at_hi, np.maximum(r, 0.0), np.abs(r))))
    primal = max(0.0, p.b - float(p.a @ u))
    box = float(np.max(np.maximum(p.lower - u, u - p.upper), initial=0.0))
    comp = abs(lam * (float(p.a @ u) - p.b))
    return float(max(np.max(stat, initial=0.0), primal, max(box, 0.0), max(-lam, 0.0), comp))


def solve(problem: QpProblem) -> QpSolution:
    """Unique minimiser, or ``status='infeasible'`` when the box misses the halfspace."""
    p = problem
    a, lo, hi, u0 = p.a, p.lower, p.upper, p.u_nom

    if not p.boxed:
        if float(a @ u0) >= p.b:
            return QpSolution(u0.copy(), OPTIMAL, 0.0, 0.0)
        norm2 = float(a @ a)
        if norm2 == 0.0:
            return QpSolution(u0.copy(), INFEASIBLE, np.nan, np.inf)
        lam = (p.b - float(a @ u0)) / norm2
        u = u0 + lam * a
        return QpSolution(u, OPTIMAL, kkt_residual(p, u, lam), lam)

    u = np.clip(u0, lo, hi)
    phi0 = float(a @ u) - p.b
    if phi0 >= 0.0:
        return QpSolution(u, OPTIMAL, kkt_residual(p, u, 0.0), 0.0)

    best = np.where(a > 0, hi, np.where(a < 0, lo, 0.0))
    with np.errstate(invalid="ignore"):
        sup = float(np.sum(np.where(a != 0, a * best, 0.0)))
    if not sup >= p.b:
        fallback = np.where(a != 0, best, u)
        return QpSolution(fallback, INFEASIBLE, np.nan, np.inf)

    nz = a != 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_lo = np.where(nz, (lo - u0) / np.where(nz, a, 1.0), np.nan)
        t_hi = np.where(nz, (hi - u0) / np.where(nz, a, 1.0), np.nan)
    knots = np.concatenate([t_lo, t_hi])
    knots = np.unique(knots[np.isfinite(knots) & (knots > 0.0)])

    lam_prev, phi_prev = 0.0, phi0
    for t in np.append(knots, np.inf):
        # coordinates moving freely on (lam_prev, t)
        mid = lam_prev + 1.0 if np.isinf(t) else 0.5 * (lam_prev + t)
        trial = u0 + mid * a
        free = nz & (trial > lo) & (trial < hi)
        slope = float(a[free] @ a[free])
        if slope > 0.0:
            lam = lam_prev - phi_prev / slope
            if lam <= t:
                u = np.clip(u0 + lam * a, lo, hi)
                u[free] = u0[free] + lam * a[free]
                return QpSolution(u, OPTIMAL, kkt_residual(p, u, lam), lam)
        lam_prev = t
        phi_prev = float(a @ np.clip(u0 + t * a, lo, hi)) - p.b
        if phi_prev >= 0.0:
            u = np.clip(u0 + t * a, lo, hi)
            return QpSolution(u, OPTIMAL, kkt_residual(p, u, t), t)
    raise AssertionError("breakpoint walk failed on a feasible problem")
