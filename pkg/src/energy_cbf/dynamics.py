"""Euler-Lagrange dynamics of a planar serial chain of revolute joints.

Conventions
-----------
* Joint angles are relative; the absolute angle of link ``i`` is
  ``base_angle + q[0] + ... + q[i]``. With ``base_angle = 0`` the
  configuration ``q = 0`` lays every link along ``+x``.
* Gravity acts along ``-y`` with magnitude ``gravity`` (set it to zero for a
  gravity-compensated arm or a horizontal plane).
* ``D`` is the joint-space inertia matrix, ``C`` the Coriolis matrix built
  from Christoffel symbols (so ``D_dot - 2 C`` is skew-symmetric), ``g`` the
  gradient of the potential energy and ``J`` the 2 x n end-effector Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ModelError(ValueError):
    """Invalid robot parameters or model file."""


@dataclass(frozen=True)
class RobotModel:
    """Inertial and kinematic parameters of an n-link planar arm.

    Per-link arrays are ``mass`` (kg), ``length`` (m), ``com`` (distance of
    the centre of mass from the proximal joint, m) and ``inertia`` (about the
    centre of mass, kg m^2).
    """

    mass: np.ndarray
    length: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    gravity: float = 9.81
    actuation: np.ndarray | None = None
    torque_limits: np.ndarray | None = None
    base_angle: float = 0.0
    _A: np.ndarray = field(init=False, repr=False, compare=False)
    _gm: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        arrays = {}
        for name in ("mass", "length", "com", "inertia"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.ndim != 1:
                raise ModelError(f"{name}: expected a flat per-link array")
            arrays[name] = arr
        n = arrays["mass"].size
        if n < 1:
            raise ModelError("mass: at least one link is required")
        for name, arr in arrays.items():
            if arr.size != n:
                raise ModelError(f"{name}: expected {n} entries, got {arr.size}")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name}: entries must be finite")
        if np.any(arrays["mass"] <= 0):
            raise ModelError("mass: link masses must be positive")
        if np.any(arrays["length"] <= 0):
            raise ModelError("length: link lengths must be positive")
        if np.any(arrays["inertia"] < 0):
            raise ModelError("inertia: link inertias must be non-negative")
        if not np.isfinite(self.gravity):
            raise ModelError("gravity: must be finite")

        B = np.eye(n) if self.actuation is None else np.asarray(self.actuation, dtype=float)
        if B.shape != (n, n):
            raise ModelError(f"actuation: expected a {n}x{n} matrix, got shape {B.shape}")
        if not np.all(np.isfinite(B)) or np.linalg.matrix_rank(B) < n:
            raise ModelError("actuation: matrix must be finite and full rank")

        limits = None
        if self.torque_limits is not None:
            limits = np.broadcast_to(np.asarray(self.torque_limits, dtype=float), (n,)).copy()
            if np.any(np.isnan(limits)) or np.any(limits <= 0):
                raise ModelError("torque_limits: bounds must be positive (inf for unbounded)")

        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        B = B.copy()
        B.setflags(write=False)
        object.__setattr__(self, "actuation", B)
        object.__setattr__(self, "torque_limits", limits)
        object.__setattr__(self, "gravity", float(self.gravity))
        object.__setattr__(self, "base_angle", float(self.base_angle))

        # lever[i, j]: distance along link j that moves the centre of mass of link i
        m, l, c = arrays["mass"], arrays["length"], arrays["com"]
        lever = np.tril(np.broadcast_to(l, (n, n)), k=-1) + np.diag(c)
        A = lever.T @ (m[:, None] * lever) + np.diag(arrays["inertia"])
        gm = self.gravity * (m @ lever)
        object.__setattr__(self, "_A", np.ascontiguousarray(A))
        object.__setattr__(self, "_gm", np.ascontiguousarray(gm))

    @property
    def n_links(self) -> int:
        return self.mass.size

    @property
    def B(self) -> np.ndarray:
        return self.actuation

    def with_gravity(self, gravity: float) -> "RobotModel":
        return replace(self, gravity=gravity)


@dataclass(frozen=True)
class State:
    """Joint positions ``q`` (rad) and velocities ``qdot`` (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.ascontiguousarray(np.atleast_1d(np.asarray(self.q, dtype=float)))
        qd = np.ascontiguousarray(np.atleast_1d(np.asarray(self.qdot, dtype=float)))
        if q.shape != qd.shape or q.ndim != 1:
            raise ValueError(f"q and qdot must be equal-length vectors, got {q.shape} and {qd.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


@dataclass(frozen=True)
class DynamicsTerms:
    D: np.ndarray
    C: np.ndarray
    g: np.ndarray
    J: np.ndarray
    x_ee: np.ndarray


def _check(model: RobotModel, state: State):
    if state.q.size != model.n_links:
        raise ValueError(f"state has {state.q.size} joints, model has {model.n_links}")


def _vector(model: RobotModel, v, name: str) -> np.ndarray:
    if v is None:
        return np.zeros(model.n_links)
    arr = np.ascontiguousarray(np.asarray(v, dtype=float))
    if arr.shape != (model.n_links,):
        raise ValueError(f"{name}: expected shape ({model.n_links},), got {arr.shape}")
    return arr


def compute_terms(model: RobotModel, state: State, orientation: bool = False) -> DynamicsTerms:
    """Inertia, Coriolis, gravity and end-effector Jacobian at ``state``.

    With ``orientation=True`` the Jacobian gains a third row mapping joint
    rates to the end-effector's planar angular velocity.
    """
    _check(model, state)
    D, C, g, J, x = kernels.terms(model._A, model._gm, model.length, model.base_angle,
                                  state.q, state.qdot)
    if orientation:
        J = np.vstack([J, np.ones(model.n_links)])
    return DynamicsTerms(D=D, C=C, g=g, J=J, x_ee=x)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    q = _vector(model, q, "q")
    return kernels.mass_matrix(model._A, model.base_angle, q)


def mass_matrix_rate(model: RobotModel, state: State) -> np.ndarray:
    """Time derivative of ``D(q)`` along ``qdot``, from its closed form."""
    _check(model, state)
    th = model.base_angle + np.cumsum(state.q)
    w = np.cumsum(state.qdot)
    rate = -model._A * np.sin(th[:, None] - th[None, :]) * (w[:, None] - w[None, :])
    return np.cumsum(np.cumsum(rate[::-1, ::-1], axis=0), axis=1)[::-1, ::-1]


def kinetic_energy(model: RobotModel, state: State) -> float:
    _check(model, state)
    D = kernels.mass_matrix(model._A, model.base_angle, state.q)
    return 0.5 * float(state.qdot @ D @ state.qdot)


def potential_energy(model: RobotModel, q) -> float:
    """Gravitational potential energy (zero when every link is horizontal)."""
    q = _vector(model, q, "q")
    th = model.base_angle + np.cumsum(q)
    return float(model._gm @ np.sin(th))


def end_effector(model: RobotModel, q) -> np.ndarray:
    q = _vector(model, q, "q")
    th = model.base_angle + np.cumsum(q)
    return np.array([model.length @ np.cos(th), model.length @ np.sin(th)])


def jacobian(model: RobotModel, q) -> np.ndarray:
    q = _vector(model, q, "q")
    th = model.base_angle + np.cumsum(q)
    jt = np.vstack([-model.length * np.sin(th), model.length * np.cos(th)])
    return np.cumsum(jt[:, ::-1], axis=1)[:, ::-1]


def forward_dynamics(model: RobotModel, state: State, u=None, tau_ext=None) -> np.ndarray:
    """Solve ``D qddot = B u + tau_ext - C qdot - g`` for ``qddot``.

    Raises ``numpy.linalg.LinAlgError`` when ``D`` is not positive definite.
    """
    _check(model, state)
    tau = model.B @ _vector(model, u, "u") + _vector(model, tau_ext, "tau_ext")
    return kernels.accel(model._A, model._gm, model.length, model.base_angle,
                         state.q, state.qdot, np.ascontiguousarray(tau),
                         np.zeros(2), np.zeros(4))


def energy_rate(model: RobotModel, state: State, u=None, tau_ext=None, g=None) -> float:
    """Rate of change of kinetic energy: ``qdot^T (B u + tau_ext - g)``."""
    _check(model, state)
    if g is None:
        th = model.base_angle + np.cumsum(state.q)
        g = np.cumsum((model._gm * np.cos(th))[::-1])[::-1]
    qd = state.qdot
    return float(-qd @ g + qd @ (model.B @ _vector(model, u, "u")) + qd @ _vector(model, tau_ext, "tau_ext"))


def model_from_dict(data: dict) -> RobotModel:
    """Build a model from the parsed ``[robot]``/``[links]`` config tables."""
    if "links" not in data:
        raise ModelError("missing [links] table")
    links = data["links"]
    robot = data.get("robot", {})
    missing = [k for k in ("mass", "length") if k not in links]
    if missing:
        raise ModelError(f"links.{missing[0]}: required field missing")
    try:
        mass = np.asarray(links["mass"], dtype=float)
        length = np.asarray(links["length"], dtype=float)
        com = np.asarray(links.get("com", 0.5 * length), dtype=float)
        if "inertia" in links:
            inertia = np.asarray(links["inertia"], dtype=float)
        else:
            inertia = mass * length**2 / 12.0
    except (TypeError, ValueError) as exc:
        raise ModelError(f"links: {exc}") from None
    known = {"gravity", "base_angle", "actuation", "torque_limits"}
    unknown = set(robot) - known
    if unknown:
        raise ModelError(f"robot.{sorted(unknown)[0]}: unknown field")
    return RobotModel(
        mass=mass,
        length=length,
        com=com,
        inertia=inertia,
        gravity=robot.get("gravity", 9.81),
        actuation=robot.get("actuation"),
        torque_limits=robot.get("torque_limits"),
        base_angle=robot.get("base_angle", 0.0),
    )


def load_model(path) -> RobotModel:
    """Read a TOML robot file; errors name the offending file and field."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ModelError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ModelError(f"{path}: {exc}") from None
    try:
        return model_from_dict(data)
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from None


def desk_arm(gravity: float = 9.81) -> RobotModel:
    """Default three-link desk-scale arm.

    Link inertias lump the link body with its reflected actuator inertia; a
    bare slender-rod distal link is light enough that a 1 kHz sampled filter
    chatters on it.
    """
    length = np.array([0.45, 0.40, 0.25])
    return RobotModel(
        mass=np.array([4.0, 3.0, 2.0]),
        length=length,
        com=0.5 * length,
        inertia=np.array([0.3, 0.2, 0.1]),
        gravity=gravity,
    )
