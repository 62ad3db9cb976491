"""Nominal controllers feeding the safety filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsTerms, RobotModel, State, compute_terms


def _gain(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return arr * np.eye(2)
    if arr.shape != (2, 2):
        raise ValueError(f"Cartesian gain must be a scalar or 2x2 matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ImpedanceConfig:
    """Isotropic (or 2x2) Cartesian spring-damper towards ``setpoint``."""

    stiffness: float | np.ndarray = 200.0
    damping: float | np.ndarray = 6.0
    setpoint: np.ndarray = (0.0, 0.0)

    def __post_init__(self):
        K, Dd = _gain(self.stiffness), _gain(self.damping)
        for name, M in (("stiffness", K), ("damping", Dd)):
            if np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        object.__setattr__(self, "stiffness", K)
        object.__setattr__(self, "damping", Dd)
        object.__setattr__(self, "setpoint", np.asarray(self.setpoint, dtype=float).reshape(2))


def cartesian_force(config: ImpedanceConfig, x, xdot, setpoint=None) -> np.ndarray:
    xd = config.setpoint if setpoint is None else np.asarray(setpoint, dtype=float)
    return config.stiffness @ (xd - x) - config.damping @ xdot


def impedance_torque(model: RobotModel, state: State, config: ImpedanceConfig,
                     setpoint=None, terms: DynamicsTerms | None = None,
                     gravity_compensation: bool = False) -> np.ndarray:
    """``u_nom = B^-1 (J^T F + g)`` with ``F`` the Cartesian spring-damper force.

    ``setpoint`` overrides the configured one (scenarios schedule it).
    """
    if terms is None:
        terms = compute_terms(model, state)
    xdot = terms.J @ state.qdot
    tau = terms.J.T @ cartesian_force(config, terms.x_ee, xdot, setpoint)
    if gravity_compensation:
        tau = tau + terms.g
    return np.linalg.solve(model.B, tau)


def spring_energy(config: ImpedanceConfig, x, setpoint=None) -> float:
    """Energy stored in the virtual Cartesian spring."""
    xd = config.setpoint if setpoint is None else np.asarray(setpoint, dtype=float)
    e = xd - np.asarray(x, dtype=float)
    return 0.5 * float(e @ config.stiffness @ e)


def zero_controller(model: RobotModel, state: State | None = None,
                    terms: DynamicsTerms | None = None,
                    gravity_compensation: bool = False) -> np.ndarray:
    """Disabled nominal controller (optionally still compensating gravity)."""
    if not gravity_compensation:
        return np.zeros(model.n_links)
    if terms is None:
        terms = compute_terms(model, state)
    return np.linalg.solve(model.B, terms.g)
