"""Kinetic-energy barrier ``h = K_max - 1/2 qdot^T D(q) qdot`` and its filter.

The filtered input solves

    min ||u - u_nom||^2   s.t.   a.u >= b,   u in box,

with ``a = -B^T qdot`` and ``b = -qdot^T g - gamma h`` (plus
``qdot^T tau_ext_hat`` in interaction-aware mode), which is the requirement
``hdot + gamma h >= 0`` written out. The constraint margin
``psi(u) = a.u - b`` decides whether the filter has to act at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qp
from .dynamics import DynamicsTerms, RobotModel, State, compute_terms

AGNOSTIC = "agnostic"
AWARE = "aware"

OK = "ok"
INFEASIBLE_CLIPPED = "infeasible_clipped"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class FilterConfig:
    """Energy limit ``k_max`` (J), class-K gain ``gamma`` (1/s) and input box."""

    k_max: float
    gamma: float
    mode: str = AGNOSTIC
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    eps_v: float = 1e-6

    def __post_init__(self):
        if not self.k_max >= 0:
            raise ValueError(f"k_max must be >= 0, got {self.k_max}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.mode not in (AGNOSTIC, AWARE):
            raise ValueError(f"mode must be '{AGNOSTIC}' or '{AWARE}', got {self.mode!r}")
        if not self.eps_v > 0:
            raise ValueError("eps_v must be > 0")

    @classmethod
    def with_torque_limits(cls, model: RobotModel, **kwargs) -> "FilterConfig":
        limits = model.torque_limits
        if limits is None:
            return cls(**kwargs)
        return cls(lower=-limits, upper=limits, **kwargs)


@dataclass(frozen=True)
class FilterResult:
    """Outcome of one filter call.

    ``psi`` is the margin at the nominal input (negative means the filter
    had to act); ``hdot`` is the barrier rate at the commanded input.
    """

    u: np.ndarray
    u_safe: np.ndarray
    h: float
    hdot: float
    psi: float
    p_safe: float
    intervened: bool
    status: str = OK


def _terms(model, state, terms):
    return compute_terms(model, state) if terms is None else terms


def _estimate(model, config, tau_ext_est):
    if config.mode == AGNOSTIC or tau_ext_est is None:
        return None
    tau = np.asarray(tau_ext_est, dtype=float)
    if tau.shape != (model.n_links,):
        raise ValueError(f"tau_ext_est: expected shape ({model.n_links},), got {tau.shape}")
    return tau


def barrier(model: RobotModel, state: State, config: FilterConfig,
            terms: DynamicsTerms | None = None) -> float:
    D = _terms(model, state, terms).D
    return config.k_max - 0.5 * float(state.qdot @ D @ state.qdot)


def barrier_rate(model: RobotModel, state: State, u, tau_ext_est, config: FilterConfig,
                 terms: DynamicsTerms | None = None) -> float:
    g = _terms(model, state, terms).g
    qd = state.qdot
    rate = float(qd @ g) - float(qd @ (model.B @ np.asarray(u, dtype=float)))
    tau = _estimate(model, config, tau_ext_est)
    if tau is not None:
        rate -= float(qd @ tau)
    return rate


def psi(model: RobotModel, state: State, u, tau_ext_est, config: FilterConfig,
        terms: DynamicsTerms | None = None) -> float:
    terms = _terms(model, state, terms)
    return (barrier_rate(model, state, u, tau_ext_est, config, terms)
            + config.gamma * barrier(model, state, config, terms))


def constraint(model: RobotModel, state: State, tau_ext_est, config: FilterConfig,
               terms: DynamicsTerms | None = None) -> tuple[np.ndarray, float, float]:
    """Return ``(a, b, h)`` such that the barrier condition reads ``a.u >= b``."""
    terms = _terms(model, state, terms)
    qd = state.qdot
    h = config.k_max - 0.5 * float(qd @ terms.D @ qd)
    a = -(model.B.T @ qd)
    b = -float(qd @ terms.g) - config.gamma * h
    tau = _estimate(model, config, tau_ext_est)
    if tau is not None:
        b += float(qd @ tau)
    return a, b, h


def apply_filter(model: RobotModel, state: State, u_nom, tau_ext_est, config: FilterConfig,
                 terms: DynamicsTerms | None = None) -> FilterResult:
    """Minimally modify ``u_nom`` so that ``hdot >= -gamma h``.

    Inputs with a non-negative margin are returned untouched. When the
    margin is negative but ``|B^T qdot| <= eps_v`` no input can change the
    energy rate, so ``u_nom`` is passed through with ``status='degenerate'``.
    If the box excludes every admissible input, the most dissipating torque
    in the box is used and ``status='infeasible_clipped'``.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    a, b, h = constraint(model, state, tau_ext_est, config, terms)
    margin = float(a @ u_nom) - b
    zero = np.zeros_like(u_nom)
    if margin >= 0.0:
        return FilterResult(u_nom, zero, h, margin - config.gamma * h, margin, 0.0, False)
    if np.linalg.norm(a) <= config.eps_v:
        return FilterResult(u_nom, zero, h, margin - config.gamma * h, margin, 0.0, True, DEGENERATE)

    sol = qp.solve(qp.QpProblem(u_nom, a, b, config.lower, config.upper))
    status = OK if sol.status == qp.OPTIMAL else INFEASIBLE_CLIPPED
    u = sol.u
    u_safe = u - u_nom
    p_safe = float(state.qdot @ (model.B @ u_safe))
    hdot = float(a @ u) - b - config.gamma * h
    return FilterResult(u, u_safe, h, hdot, margin, p_safe, True, status)


def closed_form(model: RobotModel, state: State, u_nom, tau_ext_est, config: FilterConfig,
                terms: DynamicsTerms | None = None) -> np.ndarray:
    """Unconstrained-input solution ``u_nom + B^T qdot psi / |B^T qdot|^2``."""
    u_nom = np.asarray(u_nom, dtype=float)
    margin = psi(model, state, u_nom, tau_ext_est, config, terms)
    if margin >= 0.0:
        return u_nom.copy()
    direction = model.B.T @ state.qdot
    return u_nom + direction * (margin / float(direction @ direction))
