"""Fixed-step closed-loop simulation with a zero-order-hold control loop.

Each control tick: measure the state (optional velocity noise followed by
the acceleration rate limiter), ask the scenario for the nominal torque and
the external loads, run the safety filter, then integrate the plant with
the torque held over ``physics_substeps`` RK4 steps.

External loads are expressed at the end effector: a force held over the tick
and an optional tension-only spring to a fixed anchor, which the integrator
re-evaluates at every RK4 stage.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dynamics import RobotModel, State, compute_terms, potential_energy
from .safety_filter import FilterConfig, apply_filter

STATUS_CODES = {"ok": 0, "infeasible_clipped": 1, "degenerate": 2}


class SimulationError(RuntimeError):
    """The state became non-finite; ``trace`` holds the ticks before failure."""

    def __init__(self, message, index, trace):
        super().__init__(message)
        self.index = index
        self.trace = trace


@dataclass(frozen=True)
class SimConfig:
    dt_control: float = 1e-3
    physics_substeps: int = 10
    duration: float = 1.0
    velocity_noise_std: float = 0.0
    qddot_max: np.ndarray | None = None
    seed: int = 0
    gravity_compensated: bool = False
    torque_lag: float = 0.0

    def __post_init__(self):
        if not self.dt_control > 0:
            raise ValueError("dt_control must be > 0")
        if int(self.physics_substeps) < 1:
            raise ValueError("physics_substeps must be >= 1")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        if self.torque_lag < 0:
            raise ValueError("torque_lag must be >= 0")
        if self.velocity_noise_std < 0:
            raise ValueError("velocity_noise_std must be >= 0")
        if self.qddot_max is not None:
            qm = np.asarray(self.qddot_max, dtype=float)
            if np.any(qm <= 0):
                raise ValueError("qddot_max must be positive")
            object.__setattr__(self, "qddot_max", qm)

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt_control))


@dataclass
class Command:
    """Scenario output for one tick.

    ``f_ee`` is an external end-effector force held over the tick (N);
    ``spring`` is ``(stiffness, anchor_x, anchor_y, rest_length)`` of a
    tension-only string from the end effector, zero stiffness meaning none.
    """

    u_nom: np.ndarray
    f_ee: np.ndarray = field(default_factory=lambda: np.zeros(2))
    spring: np.ndarray = field(default_factory=lambda: np.zeros(4))
    setpoint: np.ndarray | None = None
    spring_energy: float = 0.0


def spring_force(x, spring) -> np.ndarray:
    k, ax, ay, rest = spring
    d = np.asarray(x, dtype=float) - (ax, ay)
    dist = float(np.hypot(*d))
    if k <= 0 or dist <= rest or dist == 0.0:
        return np.zeros(2)
    return -k * (dist - rest) / dist * d


def spring_potential(x, spring) -> float:
    k, ax, ay, rest = spring
    stretch = float(np.hypot(x[0] - ax, x[1] - ay)) - rest
    return 0.5 * k * stretch * stretch if k > 0 and stretch > 0 else 0.0


@dataclass(frozen=True)
class TorqueEstimator:
    """External-torque estimate handed to the filter.

    ``kind`` is ``exact``, ``scaled`` (``scale`` times the truth),
    ``delayed`` (truth from ``delay`` ticks earlier) or ``zero``.
    """

    kind: str = "exact"
    scale: float = 1.0
    delay: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "scaled", "delayed", "zero"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")

    def make(self):
        history = []

        def estimate(tau_true):
            if self.kind == "exact":
                return tau_true
            if self.kind == "scaled":
                return self.scale * tau_true
            if self.kind == "zero":
                return np.zeros_like(tau_true)
            history.append(tau_true)
            if len(history) > self.delay + 1:
                history.pop(0)
            return history[0] if len(history) == self.delay + 1 else np.zeros_like(tau_true)

        return estimate


def rate_limit_velocity(prev, raw, dt: float, qddot_max) -> np.ndarray:
    """Clamp each joint's velocity increment to ``dt * qddot_max``.

    Joints within the bound get ``raw`` back unchanged (not ``prev + step``,
    which can differ in the last bit).
    """
    prev = np.asarray(prev, dtype=float)
    raw = np.asarray(raw, dtype=float)
    bound = dt * np.asarray(qddot_max, dtype=float)
    step = raw - prev
    return np.where(np.abs(step) <= bound, raw, prev + np.clip(step, -bound, bound))


@dataclass(frozen=True)
class TraceRecord:
    t: float
    q: np.ndarray
    qdot: np.ndarray
    ee: np.ndarray
    K_e: float
    h: float
    psi: float
    u_nom: np.ndarray
    u: np.ndarray
    u_safe: np.ndarray
    p_nom: float
    p_safe: float
    p_ext: float
    e_spring: float
    w_nom: float
    w_safe: float
    w_act: float
    w_ext: float
    w_grav: float
    intervened: bool
    status: int


_VECTOR_FIELDS = ("q", "qdot", "u_nom", "u", "u_safe")
_SCALAR_FIELDS = ("K_e", "h", "psi", "p_nom", "p_safe", "p_ext", "e_spring",
                  "w_nom", "w_safe", "w_act", "w_ext", "w_grav")


class Trace:
    """Columnar per-tick log; ``trace[i]`` gives a :class:`TraceRecord`.

    ``w_*`` columns hold the work done over the control interval that starts
    at the tick: ``w_nom``/``w_safe`` by the commanded nominal and filter
    torques, ``w_act`` by the torque actually applied (differs only with a
    torque lag), ``w_ext`` by external loads and ``w_grav`` by gravity.
    ``final_*`` attributes hold the state after the last interval.
    """

    def __init__(self, n_ticks: int, n_joints: int, meta: dict | None = None):
        self.n = n_joints
        self.meta = dict(meta or {})
        self.t = np.zeros(n_ticks)
        self.ee = np.zeros((n_ticks, 2))
        for name in _VECTOR_FIELDS:
            setattr(self, name, np.zeros((n_ticks, n_joints)))
        for name in _SCALAR_FIELDS:
            setattr(self, name, np.zeros(n_ticks))
        self.intervened = np.zeros(n_ticks, dtype=bool)
        self.status = np.zeros(n_ticks, dtype=np.int8)
        self.length = n_ticks
        self.final_q = None
        self.final_qdot = None
        self.final_K_e = None

    def __len__(self):
        return self.length

    def __getitem__(self, i) -> TraceRecord:
        if not -self.length <= i < self.length:
            raise IndexError(i)
        i %= self.length
        return TraceRecord(
            t=float(self.t[i]), ee=self.ee[i].copy(),
            **{k: getattr(self, k)[i].copy() for k in _VECTOR_FIELDS},
            **{k: float(getattr(self, k)[i]) for k in _SCALAR_FIELDS},
            intervened=bool(self.intervened[i]), status=int(self.status[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(self.length))

    def truncate(self, length: int):
        for name in self._array_names():
            setattr(self, name, getattr(self, name)[:length])
        self.length = length

    def _array_names(self):
        return ("t", "ee", *_VECTOR_FIELDS, *_SCALAR_FIELDS, "intervened", "status")

    def columns(self) -> list[str]:
        cols = ["t"]
        for name in ("q", "qdot"):
            cols += [f"{name}_{j}" for j in range(self.n)]
        cols += ["ee_x", "ee_y", "K_e", "h", "psi"]
        for name in ("u_nom", "u", "u_safe"):
            cols += [f"{name}_{j}" for j in range(self.n)]
        cols += ["p_nom", "p_safe", "p_ext", "e_spring", "w_nom", "w_safe", "w_act", "w_ext",
                 "w_grav", "intervened", "status"]
        return cols

    def table(self) -> np.ndarray:
        return np.column_stack([
            self.t, self.q, self.qdot, self.ee, self.K_e, self.h, self.psi,
            self.u_nom, self.u, self.u_safe, self.p_nom, self.p_safe, self.p_ext,
            self.e_spring, self.w_nom, self.w_safe, self.w_act, self.w_ext, self.w_grav,
            self.intervened.astype(float), self.status.astype(float),
        ])

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns())
            for row in self.table():
                writer.writerow([repr(float(v)) for v in row])
        return path

    def to_npz(self, path):
        """Compressed binary trace; ``meta`` and final state are kept too."""
        path = Path(path)
        arrays = {name: getattr(self, name) for name in self._array_names()}
        final = {} if self.final_q is None else {
            "final_q": self.final_q, "final_qdot": self.final_qdot,
            "final_K_e": np.array(self.final_K_e)}
        np.savez_compressed(path, meta=np.array(json.dumps(self.meta)), **arrays, **final)
        return path

    @classmethod
    def from_npz(cls, path) -> "Trace":
        with np.load(path) as data:
            q = data["q"]
            trace = cls(q.shape[0], q.shape[1], json.loads(str(data["meta"])))
            for name in trace._array_names():
                setattr(trace, name, data[name].copy())
            if "final_q" in data:
                trace.final_q = data["final_q"].copy()
                trace.final_qdot = data["final_qdot"].copy()
                trace.final_K_e = float(data["final_K_e"])
        return trace


def energy_audit(trace: Trace) -> tuple[float, float]:
    """Return ``(residual, max K_e)`` of the discrete energy balance.

    The residual is ``K_e(end) - K_e(0)`` minus the summed work of the
    applied actuator torque, external loads and gravity.
    """
    work = np.sum(trace.w_act + trace.w_ext + trace.w_grav)
    k_end = trace.final_K_e if trace.final_K_e is not None else trace.K_e[-1]
    residual = (k_end - trace.K_e[0]) - work
    return float(residual), float(max(np.max(trace.K_e), k_end))


def run(model: RobotModel, sim_config: SimConfig, filter_config: FilterConfig, scenario,
        filter_on: bool = True, estimator: TorqueEstimator | None = None) -> Trace:
    """Simulate ``scenario`` and return the per-tick trace.

    ``scenario`` provides ``initial_state(model)`` and
    ``command(t, model, state, terms) -> Command`` and may define ``reset()``.
    With ``filter_on=False`` the filter is still evaluated for diagnostics
    but ``u_nom`` is applied.
    """
    cfg = sim_config
    eff = model.with_gravity(0.0) if cfg.gravity_compensated else model
    estimate = (estimator or TorqueEstimator()).make()
    rng = np.random.default_rng(cfg.seed)
    if hasattr(scenario, "reset"):
        scenario.reset()

    state = scenario.initial_state(eff)
    q, qd = state.q.copy(), state.qdot.copy()
    n = eff.n_links
    dt = cfg.dt_control
    h = dt / cfg.physics_substeps
    nsub = int(cfg.physics_substeps)
    B = eff.B
    A, gm, lengths, base = eff._A, eff._gm, eff.length, eff.base_angle
    trace = Trace(cfg.n_ticks, n, meta={
        "k_max": filter_config.k_max, "gamma": filter_config.gamma, "mode": filter_config.mode,
        "filter": filter_on, "dt_control": dt, "physics_substeps": nsub,
        "seed": cfg.seed, "gravity_compensated": cfg.gravity_compensated,
        "backend": kernels.BACKEND,
    })

    prev_meas = None
    applied = None
    lag = 1.0 - np.exp(-dt / cfg.torque_lag) if cfg.torque_lag > 0 else 1.0
    for k in range(cfg.n_ticks):
        t = k * dt
        meas = qd + rng.normal(0.0, cfg.velocity_noise_std, n) if cfg.velocity_noise_std > 0 else qd
        if cfg.qddot_max is not None and prev_meas is not None:
            meas = rate_limit_velocity(prev_meas, meas, dt, cfg.qddot_max)
        prev_meas = meas

        seen = State(q, meas)
        terms = compute_terms(eff, seen)
        cmd = scenario.command(t, eff, seen, terms)
        u_nom = np.asarray(cmd.u_nom, dtype=float)
        f_ee = np.ascontiguousarray(cmd.f_ee, dtype=float)
        spring = np.ascontiguousarray(cmd.spring, dtype=float)

        x0 = terms.x_ee
        f_total = f_ee + spring_force(x0, spring)
        tau_true = terms.J.T @ f_total
        result = apply_filter(eff, seen, u_nom, estimate(tau_true), filter_config, terms)
        if filter_on:
            u, u_safe, p_safe, intervened, status = (
                result.u, result.u_safe, result.p_safe, result.intervened, result.status)
        else:
            u, u_safe, p_safe, intervened, status = u_nom, np.zeros(n), 0.0, False, "ok"

        K_e = 0.5 * float(qd @ terms.D @ qd)
        trace.t[k] = t
        trace.q[k] = q
        trace.qdot[k] = qd
        trace.ee[k] = x0
        trace.K_e[k] = K_e
        trace.h[k] = result.h
        trace.psi[k] = result.psi
        trace.u_nom[k] = u_nom
        trace.u[k] = u
        trace.u_safe[k] = u_safe
        trace.p_nom[k] = float(qd @ (B @ u_nom))
        trace.p_safe[k] = p_safe
        trace.p_ext[k] = float(qd @ tau_true)
        trace.e_spring[k] = cmd.spring_energy
        trace.intervened[k] = intervened
        trace.status[k] = STATUS_CODES[status]

        V0 = potential_energy(eff, q)
        Vs0 = spring_potential(x0, spring)
        applied = u if applied is None or lag == 1.0 else applied + lag * (u - applied)
        tau = np.ascontiguousarray(B @ applied)
        q_new, qd_new = kernels.integrate(A, gm, lengths, base, q, qd, tau, f_ee, spring, h, nsub)
        if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
            trace.truncate(k + 1)
            raise SimulationError(f"non-finite state after tick {k} (t={t:.4f} s)", k, trace)

        dq = q_new - q
        x1 = np.array([lengths @ np.cos(base + np.cumsum(q_new)),
                       lengths @ np.sin(base + np.cumsum(q_new))])
        trace.w_nom[k] = float(dq @ (B @ u_nom))
        trace.w_safe[k] = float(dq @ (B @ u_safe))
        trace.w_act[k] = float(dq @ tau)
        trace.w_ext[k] = float(f_ee @ (x1 - x0)) - (spring_potential(x1, spring) - Vs0)
        trace.w_grav[k] = V0 - potential_energy(eff, q_new)
        q, qd = q_new, qd_new

    trace.final_q = q
    trace.final_qdot = qd
    trace.final_K_e = 0.5 * float(qd @ kernels.mass_matrix(A, base, q) @ qd)
    return trace


def max_acceleration(trace: Trace) -> np.ndarray:
    """Per-joint peak of the finite-difference joint acceleration."""
    dt = trace.meta.get("dt_control", trace.t[1] - trace.t[0])
    return np.max(np.abs(np.diff(trace.qdot, axis=0)), axis=0) / dt
