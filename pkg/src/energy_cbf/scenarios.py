"""Experiment scenarios on the desk arm and their analysis routines.

Four scenario kinds are provided:

``step_response``
    impedance controller tracking a square-wave setpoint step;
``contact_loss``
    impedance spring preloaded against a taut string that is cut;
``external_interaction``
    zero controller, scripted raised-cosine push at the end effector;
``constant_power``
    zero controller, end-effector force regulated to inject a constant power
    that the filter does not see.

Scenario definitions live in TOML files (see ``configs/``); the experiment
functions run the sweeps, optionally in parallel worker processes.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controllers import ImpedanceConfig, impedance_torque, spring_energy, zero_controller
from .dynamics import ModelError, RobotModel, State, desk_arm, end_effector, load_model
from .safety_filter import AGNOSTIC, AWARE, FilterConfig
from .simulator import Command, SimConfig, TorqueEstimator, Trace, max_acceleration, run

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CONFIG_DIR = Path(__file__).parent / "configs"
BUILTIN = {"exp1": "exp1.toml", "exp2": "exp2.toml", "exp3": "exp3.toml", "exp4": "exp4.toml"}
KINDS = ("step_response", "contact_loss", "external_interaction", "constant_power")


class ScenarioError(ValueError):
    """Invalid scenario definition."""


class SteadyStateError(RuntimeError):
    """No window of the trace satisfies the steady-state test."""


# ---------------------------------------------------------------------------
# scenario objects handed to simulator.run


@dataclass
class StepScenario:
    """Setpoint jumps by ``offset`` at ``t_on`` and returns ``hold`` seconds later.

    The pattern repeats every ``period`` seconds.
    """

    q0: np.ndarray
    impedance: ImpedanceConfig
    offset: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.4]))
    t_on: float = 0.2
    hold: float = 3.0
    period: float = 6.0
    gravity_compensation: bool = False

    def initial_state(self, model):
        self._home = end_effector(model, self.q0)
        return State(self.q0, np.zeros_like(self.q0))

    def setpoint(self, t):
        on = self.t_on <= (t % self.period) < self.t_on + self.hold
        return self._home + self.offset if on else self._home

    def command(self, t, model, state, terms):
        xd = self.setpoint(t)
        u = impedance_torque(model, state, self.impedance, xd, terms, self.gravity_compensation)
        return Command(u, setpoint=xd, spring_energy=spring_energy(self.impedance, terms.x_ee, xd))


@dataclass
class ContactLossScenario:
    """Impedance spring stretched by ``lift`` and held by a taut string.

    The string hangs from the end effector to an anchor ``drop`` metres
    below it; its rest length is chosen so the arm starts in static
    equilibrium. At ``t_release`` the string stiffness drops to zero.
    """

    q0: np.ndarray
    impedance: ImpedanceConfig
    lift: float = 0.25
    drop: float = 0.3
    string_stiffness: float = 1e4
    t_release: float = 0.5
    gravity_compensation: bool = False

    def initial_state(self, model):
        x0 = end_effector(model, self.q0)
        self._setpoint = x0 + np.array([0.0, self.lift])
        reach = float(np.sum(model.length))
        if np.linalg.norm(self._setpoint) >= reach:
            raise ScenarioError(
                f"setpoint {self._setpoint.round(4).tolist()} lies outside the workspace "
                f"(reach {reach:g} m)")
        force = self.impedance.stiffness @ (self._setpoint - x0)
        tension = float(force[1])
        if tension <= 0 or abs(force[0]) > 1e-9 * max(1.0, tension):
            raise ScenarioError("the impedance force at the start must point straight up")
        rest = self.drop - tension / self.string_stiffness
        if rest <= 0:
            raise ScenarioError("string too soft for the requested preload")
        self._string = np.array([self.string_stiffness, x0[0], x0[1] - self.drop, rest])
        self.tension = tension
        self.stored_energy = spring_energy(self.impedance, x0, self._setpoint)
        return State(self.q0, np.zeros_like(self.q0))

    def command(self, t, model, state, terms):
        u = impedance_torque(model, state, self.impedance, self._setpoint, terms,
                             self.gravity_compensation)
        spring = self._string if t < self.t_release else np.zeros(4)
        return Command(u, spring=spring, setpoint=self._setpoint,
                       spring_energy=spring_energy(self.impedance, terms.x_ee, self._setpoint))


def raised_cosine(t, peak: float, duration: float, t_start: float) -> float:
    s = (t - t_start) / duration
    if s <= 0.0 or s >= 1.0:
        return 0.0
    return 0.5 * peak * (1.0 - np.cos(2.0 * np.pi * s))


@dataclass
class PushScenario:
    """Zero nominal controller; raised-cosine force bump along ``direction``."""

    q0: np.ndarray
    peak: float = 18.0
    duration: float = 1.0
    t_start: float = 0.2
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    gravity_compensation: bool = False

    def initial_state(self, model):
        return State(self.q0, np.zeros_like(self.q0))

    def command(self, t, model, state, terms):
        d = np.asarray(self.direction, dtype=float)
        f = raised_cosine(t, self.peak, self.duration, self.t_start) * d / np.linalg.norm(d)
        u = zero_controller(model, state, terms, self.gravity_compensation)
        return Command(u, f_ee=f)


@dataclass
class ConstantPowerScenario:
    """Zero nominal controller plus a force injecting constant power ``p_ext``.

    A constant ``push`` force along +y starts the motion; once the
    end-effector y-velocity reaches ``v_min`` the force switches to
    ``p_ext / ydot`` for the rest of the run. Below ``v_min`` the velocity in
    the divisor is clamped to ``+-v_min``.
    """

    q0: np.ndarray
    p_ext: float
    v_min: float = 0.05
    push: float = 20.0
    gravity_compensation: bool = False
    _engaged: bool = field(default=False, init=False, repr=False)

    def reset(self):
        self._engaged = False

    def initial_state(self, model):
        return State(self.q0, np.zeros_like(self.q0))

    def command(self, t, model, state, terms):
        ydot = float(terms.J[1] @ state.qdot)
        if not self._engaged and abs(ydot) >= self.v_min:
            self._engaged = True
        if self._engaged:
            v = ydot if abs(ydot) >= self.v_min else np.copysign(self.v_min, ydot)
            f = np.array([0.0, self.p_ext / v])
        else:
            f = np.array([0.0, self.push])
        return Command(zero_controller(model, state, terms, self.gravity_compensation), f_ee=f)


# ---------------------------------------------------------------------------
# scenario definitions


@dataclass(frozen=True)
class ScenarioSpec:
    """A parsed scenario file.

    ``params`` holds the kind-specific ``[schedule]`` table; ``p_ext_scale``
    lists the constant-power grid as multiples of ``gamma`` (W per 1/s, so the
    expected steady-state energy error is the multiple itself, in J) and
    ``p_ext`` an absolute grid (W) that overrides it.
    """

    name: str
    kind: str
    model: RobotModel
    sim: SimConfig
    k_max: float
    gammas: tuple
    mode: str = AGNOSTIC
    include_off: bool = True
    filter_on: bool = True
    impedance: ImpedanceConfig | None = None
    params: dict = field(default_factory=dict)
    cases: tuple = ("off", AGNOSTIC, AWARE)
    estimator: TorqueEstimator = TorqueEstimator()
    p_ext: tuple | None = None
    p_ext_scale: tuple = (0.02, 0.04, 0.06, 0.08, 0.1)
    settle: float = 8.0
    window: float = 0.5
    tol_fraction: float = 0.02
    auto_qddot_max: bool = False
    qddot_factor: float = 10.0
    source: str | None = None

    def filter_config(self, gamma: float, mode: str | None = None) -> FilterConfig:
        return FilterConfig.with_torque_limits(self.model, k_max=self.k_max, gamma=gamma,
                                               mode=mode or self.mode)

    def with_overrides(self, gammas=None, k_max=None, mode=None, filter_on=None, seed=None,
                       p_ext=None, duration=None) -> "ScenarioSpec":
        spec = self
        if gammas is not None:
            gammas = tuple(float(g) for g in gammas)
            if not gammas or any(g <= 0 for g in gammas):
                raise ScenarioError("gamma: values must be positive")
            spec = replace(spec, gammas=gammas)
        if k_max is not None:
            if k_max < 0:
                raise ScenarioError("k_max: must be >= 0")
            spec = replace(spec, k_max=float(k_max))
        if mode is not None:
            if mode not in (AGNOSTIC, AWARE):
                raise ScenarioError(f"mode: expected agnostic or aware, got {mode!r}")
            spec = replace(spec, mode=mode)
        if filter_on is not None:
            spec = replace(spec, filter_on=bool(filter_on))
        if seed is not None:
            spec = replace(spec, sim=replace(spec.sim, seed=int(seed)))
        if p_ext is not None:
            spec = replace(spec, p_ext=tuple(float(p) for p in p_ext))
        if duration is not None:
            spec = replace(spec, sim=replace(spec.sim, duration=float(duration)))
        return spec


def _get(table: dict, key: str, default, where: str, kind=float):
    if key not in table:
        return default
    value = table[key]
    try:
        if kind is float:
            return float(value)
        if kind is tuple:
            return tuple(float(v) for v in value)
        if kind is np.ndarray:
            return np.asarray(value, dtype=float)
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{where}.{key}: invalid value {value!r}") from None


_SCENARIO_KEYS = {"name", "kind", "model", "k_max", "gamma", "mode", "include_off", "filter",
                  "cases"}
_SIM_KEYS = {"dt_control", "physics_substeps", "duration", "velocity_noise_std", "qddot_max",
             "qddot_factor", "seed", "gravity_compensated", "torque_lag"}


def spec_from_dict(data: dict, base_dir: Path | None = None, source: str | None = None) -> ScenarioSpec:
    base_dir = Path(base_dir) if base_dir is not None else CONFIG_DIR
    sc = data.get("scenario")
    if sc is None:
        raise ScenarioError("missing [scenario] table")
    unknown = set(sc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"scenario.{sorted(unknown)[0]}: unknown field")
    kind = sc.get("kind")
    if kind not in KINDS:
        raise ScenarioError(f"scenario.kind: expected one of {', '.join(KINDS)}, got {kind!r}")

    if "model" in sc:
        model = load_model(base_dir / sc["model"])
    elif "links" in data:
        from .dynamics import model_from_dict
        model = model_from_dict(data)
    else:
        model = desk_arm()

    simt = data.get("sim", {})
    unknown = set(simt) - _SIM_KEYS
    if unknown:
        raise ScenarioError(f"sim.{sorted(unknown)[0]}: unknown field")
    qmax = simt.get("qddot_max")
    auto = qmax == "auto"
    try:
        sim = SimConfig(
            dt_control=_get(simt, "dt_control", 1e-3, "sim"),
            physics_substeps=_get(simt, "physics_substeps", 10, "sim", int),
            duration=_get(simt, "duration", 1.0, "sim"),
            velocity_noise_std=_get(simt, "velocity_noise_std", 0.0, "sim"),
            qddot_max=None if qmax is None or auto else _get(simt, "qddot_max", None, "sim", np.ndarray),
            seed=_get(simt, "seed", 0, "sim", int),
            gravity_compensated=_get(simt, "gravity_compensated", False, "sim", bool),
            torque_lag=_get(simt, "torque_lag", 0.0, "sim"),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"sim: {exc}") from None

    gammas = _get(sc, "gamma", (50.0,), "scenario", tuple)
    if not gammas or any(g <= 0 for g in gammas):
        raise ScenarioError("scenario.gamma: need a non-empty list of positive values")
    mode = sc.get("mode", AGNOSTIC)
    if mode not in (AGNOSTIC, AWARE):
        raise ScenarioError(f"scenario.mode: expected agnostic or aware, got {mode!r}")
    filt = sc.get("filter", "on")
    if filt not in ("on", "off"):
        raise ScenarioError(f"scenario.filter: expected on or off, got {filt!r}")
    cases = tuple(sc.get("cases", ("off", AGNOSTIC, AWARE)))
    if not cases or any(c not in ("off", AGNOSTIC, AWARE) for c in cases):
        raise ScenarioError("scenario.cases: entries must be off, agnostic or aware")

    impedance = None
    if "controller" in data:
        ct = data["controller"]
        try:
            impedance = ImpedanceConfig(stiffness=ct.get("stiffness", 200.0),
                                        damping=ct.get("damping", 6.0))
        except ValueError as exc:
            raise ScenarioError(f"controller: {exc}") from None
    if kind in ("step_response", "contact_loss") and impedance is None:
        impedance = ImpedanceConfig()

    est = data.get("estimator", {})
    try:
        estimator = TorqueEstimator(kind=est.get("kind", "exact"), scale=float(est.get("scale", 1.0)),
                                    delay=int(est.get("delay", 0)))
    except ValueError as exc:
        raise ScenarioError(f"estimator: {exc}") from None

    params = dict(data.get("schedule", {}))
    if "q0" not in params:
        raise ScenarioError("schedule.q0: required field missing")
    q0 = _get(params, "q0", None, "schedule", np.ndarray)
    if q0.shape != (model.n_links,):
        raise ScenarioError(f"schedule.q0: expected {model.n_links} joint angles")
    params["q0"] = q0

    power = data.get("power", {})
    steady = data.get("steady_state", {})
    spec = ScenarioSpec(
        name=str(sc.get("name", kind)),
        kind=kind,
        model=model,
        sim=sim,
        k_max=_get(sc, "k_max", 1.0, "scenario"),
        gammas=gammas,
        mode=mode,
        include_off=bool(sc.get("include_off", True)),
        filter_on=filt == "on",
        impedance=impedance,
        params=params,
        cases=cases,
        estimator=estimator,
        p_ext=_get(power, "p_ext", None, "power", tuple),
        p_ext_scale=_get(power, "p_ext_scale", (0.02, 0.04, 0.06, 0.08, 0.1), "power", tuple),
        settle=_get(power, "settle", 8.0, "power"),
        window=_get(steady, "window", 0.5, "steady_state"),
        tol_fraction=_get(steady, "tol_fraction", 0.02, "steady_state"),
        auto_qddot_max=auto,
        qddot_factor=_get(simt, "qddot_factor", 10.0, "sim"),
        source=source,
    )
    if spec.k_max < 0:
        raise ScenarioError("scenario.k_max: must be >= 0")
    return spec


def load_scenario(name_or_path) -> ScenarioSpec:
    """Load a built-in scenario (``exp1`` .. ``exp4``) or a TOML file."""
    key = str(name_or_path)
    path = CONFIG_DIR / BUILTIN[key] if key in BUILTIN else Path(key)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"{path}: file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    try:
        return spec_from_dict(data, path.parent, str(path))
    except (ScenarioError, ModelError) as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def build_scenario(spec: ScenarioSpec, p_ext: float | None = None):
    """Instantiate the scenario object for one run.

    ``schedule.gravity_feedforward`` adds ``g(q)`` to the nominal torque; it
    only matters when the simulated arm is not gravity compensated.
    """
    p = spec.params
    q0 = p["q0"]
    ff = bool(p.get("gravity_feedforward", False))
    if spec.kind == "step_response":
        return StepScenario(q0, spec.impedance, offset=np.asarray(p.get("offset", (0.0, 0.4)), float),
                            t_on=float(p.get("t_on", 0.2)), hold=float(p.get("hold", 3.0)),
                            period=float(p.get("period", 6.0)), gravity_compensation=ff)
    if spec.kind == "contact_loss":
        return ContactLossScenario(q0, spec.impedance, lift=float(p.get("lift", 0.25)),
                                   drop=float(p.get("drop", 0.3)),
                                   string_stiffness=float(p.get("string_stiffness", 1e4)),
                                   t_release=float(p.get("t_release", 0.5)),
                                   gravity_compensation=ff)
    if spec.kind == "external_interaction":
        return PushScenario(q0, peak=float(p.get("peak_force", 18.0)),
                            duration=float(p.get("push_duration", 1.0)),
                            t_start=float(p.get("t_push", 0.2)),
                            direction=np.asarray(p.get("direction", (0.0, 1.0)), float),
                            gravity_compensation=ff)
    return ConstantPowerScenario(q0, p_ext=float(p_ext if p_ext is not None else 0.0),
                                 v_min=float(p.get("v_min", 0.05)), push=float(p.get("push", 20.0)),
                                 gravity_compensation=ff)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class Job:
    label: str
    model: RobotModel
    sim: SimConfig
    filter_config: FilterConfig
    scenario: object
    filter_on: bool = True
    estimator: TorqueEstimator | None = None


def _execute(job: Job) -> Trace:
    trace = run(job.model, job.sim, job.filter_config, job.scenario, job.filter_on, job.estimator)
    trace.meta["label"] = job.label
    return trace


def run_jobs(jobs: list[Job], workers: int = 1) -> dict[str, Trace]:
    """Run independent simulations, in worker processes when ``workers > 1``."""
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            traces = list(pool.map(_execute, jobs))
    else:
        traces = [_execute(j) for j in jobs]
    return {j.label: tr for j, tr in zip(jobs, traces)}


def gamma_label(gamma: float) -> str:
    return f"gamma_{gamma:g}"


def calibrate_qddot_max(spec: ScenarioSpec, factor: float | None = None) -> np.ndarray:
    """Rate-limiter bound: ``factor`` times the peak joint acceleration of a
    noise-free, unfiltered run of the scenario."""
    factor = spec.qddot_factor if factor is None else factor
    sim = replace(spec.sim, velocity_noise_std=0.0, qddot_max=None)
    gamma = spec.gammas[0]
    p = None
    if spec.kind == "constant_power":
        p = _power_grid(spec, gamma)[-1]
        sim = replace(sim, duration=_power_duration(spec, gamma))
    trace = run(spec.model, sim, spec.filter_config(gamma), build_scenario(spec, p), filter_on=False)
    return factor * np.maximum(max_acceleration(trace), 1e-3)


def resolve_sim(spec: ScenarioSpec) -> SimConfig:
    if spec.auto_qddot_max and spec.sim.qddot_max is None:
        return replace(spec.sim, qddot_max=calibrate_qddot_max(spec))
    return spec.sim


def _gamma_sweep(spec: ScenarioSpec, include_off: bool | None, workers: int) -> dict[str, Trace]:
    sim = resolve_sim(spec)
    include_off = spec.include_off if include_off is None else include_off
    jobs = []
    if include_off or not spec.filter_on:
        jobs.append(Job("off", spec.model, sim, spec.filter_config(spec.gammas[0]),
                        build_scenario(spec), filter_on=False))
    if spec.filter_on:
        for g in spec.gammas:
            jobs.append(Job(gamma_label(g), spec.model, sim, spec.filter_config(g),
                            build_scenario(spec), estimator=spec.estimator))
    return run_jobs(jobs, workers)


def step_response(spec: ScenarioSpec | None = None, include_off: bool | None = None,
                  workers: int = 1) -> dict[str, Trace]:
    """Square-wave setpoint runs: one trace per gamma plus ``off``."""
    spec = spec or load_scenario("exp1")
    return _gamma_sweep(spec, include_off, workers)


def contact_loss(spec: ScenarioSpec | None = None, include_off: bool | None = None,
                 workers: int = 1) -> dict[str, Trace]:
    """String-release runs: one trace per gamma plus ``off``."""
    spec = spec or load_scenario("exp2")
    traces = _gamma_sweep(spec, include_off, workers)
    probe = build_scenario(spec)
    probe.initial_state(spec.model.with_gravity(0.0) if spec.sim.gravity_compensated else spec.model)
    for tr in traces.values():
        tr.meta["stored_energy"] = probe.stored_energy
        tr.meta["string_tension"] = probe.tension
    return traces


def external_interaction(spec: ScenarioSpec | None = None, cases=None,
                         workers: int = 1) -> dict[str, Trace]:
    """Identical push under each case of ``off``/``agnostic``/``aware``."""
    spec = spec or load_scenario("exp3")
    cases = tuple(cases or spec.cases)
    sim = resolve_sim(spec)
    gamma = spec.gammas[0]
    jobs = []
    for case in cases:
        if case == "off":
            jobs.append(Job("off", spec.model, sim, spec.filter_config(gamma), build_scenario(spec),
                            filter_on=False))
        else:
            jobs.append(Job(case, spec.model, sim, spec.filter_config(gamma, case),
                            build_scenario(spec), estimator=spec.estimator))
    return run_jobs(jobs, workers)


# ---------------------------------------------------------------------------
# constant-power analysis


@dataclass(frozen=True)
class FitResult:
    """Ordinary least-squares line ``y = slope x + intercept``."""

    slope: float
    intercept: float
    r2: float
    residuals: np.ndarray


def fit_line(x, y) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.shape != y.shape:
        raise ValueError("need at least two (x, y) pairs of equal length")
    X = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(residuals**2)) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)), residuals)


def detect_steady_state(trace, window: float = 0.5, tol: float | None = None) -> tuple[float, float]:
    """Earliest window where both the mean kinetic-energy rate and the mean
    net power ``p_ext + p_safe`` stay below ``tol`` in magnitude.

    ``trace`` needs ``t``, ``K_e``, ``p_ext`` and ``p_safe`` arrays. ``tol``
    defaults to 2% of the largest injected power. Returns ``(t_ss, K_ss)``
    with ``t_ss`` the end of the window and ``K_ss`` its mean kinetic energy.
    """
    t = np.asarray(trace.t, dtype=float)
    K = np.asarray(trace.K_e, dtype=float)
    net = np.asarray(trace.p_ext, dtype=float) + np.asarray(trace.p_safe, dtype=float)
    if t.size < 2:
        raise SteadyStateError("trace too short")
    dt = float(t[1] - t[0])
    w = int(round(window / dt))
    if w < 1 or w >= t.size:
        raise SteadyStateError(f"trace ({t[-1] - t[0]:.3f} s) shorter than the {window} s window")
    if tol is None:
        tol = 0.02 * float(np.max(np.abs(trace.p_ext)))
    rate = (K[w:] - K[:-w]) / (w * dt)
    csum = np.concatenate([[0.0], np.cumsum(net)])
    net_mean = (csum[w + 1:] - csum[1:-w]) / w
    ok = (np.abs(rate) < tol) & (np.abs(net_mean) < tol)
    hits = np.flatnonzero(ok)
    if hits.size == 0:
        raise SteadyStateError(f"no {window} s window with |dK/dt| and |p_ext + p_safe| below {tol:g} W")
    i = int(hits[0])
    csk = np.concatenate([[0.0], np.cumsum(K)])
    return float(t[i + w]), float((csk[i + w + 1] - csk[i + 1]) / w)


@dataclass(frozen=True)
class PowerPoint:
    """One constant-power run; ``error`` is the steady-state ``K_e - K_max``."""

    gamma: float
    p_ext: float
    error: float | None
    t_ss: float | None

    @property
    def expected(self) -> float:
        return self.p_ext / self.gamma

    @property
    def rel_error(self) -> float | None:
        if self.error is None or self.expected == 0:
            return None
        return abs(self.error - self.expected) / abs(self.expected)


@dataclass
class PowerSweep:
    k_max: float
    points: list
    fits: dict
    traces: dict

    def summary_rows(self):
        """Rows of ``(gamma, p_ext, K_ss, error, expected, slope, slope*gamma)``."""
        nan = float("nan")
        rows = []
        for pt in self.points:
            fit = self.fits.get(pt.gamma)
            slope = fit.slope if fit else nan
            err = nan if pt.error is None else pt.error
            rows.append((pt.gamma, pt.p_ext, err + self.k_max, err, pt.expected, slope,
                         slope * pt.gamma))
        return rows


def _power_grid(spec: ScenarioSpec, gamma: float) -> tuple:
    if spec.p_ext is not None:
        return spec.p_ext
    return tuple(gamma * s for s in spec.p_ext_scale)


def _power_duration(spec: ScenarioSpec, gamma: float) -> float:
    return max(spec.sim.duration, spec.settle / gamma + 2.0 * spec.window)


def constant_power_injection(spec: ScenarioSpec | None = None, workers: int = 1,
                             keep_traces: bool = False) -> PowerSweep:
    """Steady-state kinetic-energy error against injected power, fitted per gamma.

    Runs whose steady state is not found are dropped from the fit with a
    warning.
    """
    spec = spec or load_scenario("exp4")
    sim = resolve_sim(spec)
    jobs = []
    for g in spec.gammas:
        run_sim = replace(sim, duration=_power_duration(spec, g))
        for p in _power_grid(spec, g):
            jobs.append(Job(f"{gamma_label(g)}_p_{p:g}", spec.model, run_sim, spec.filter_config(g),
                            build_scenario(spec, p), spec.filter_on, spec.estimator))
    traces = run_jobs(jobs, workers)

    points = []
    for job in jobs:
        g, p = job.filter_config.gamma, job.scenario.p_ext
        tr = traces[job.label]
        tr.meta["p_ext"] = p
        tol = max(spec.tol_fraction * abs(p), 1e-6)
        try:
            t_ss, k_ss = detect_steady_state(tr, spec.window, tol)
            points.append(PowerPoint(g, p, k_ss - spec.k_max, t_ss))
        except SteadyStateError as exc:
            warnings.warn(f"{job.label}: {exc}; excluded from the fit", RuntimeWarning, stacklevel=2)
            points.append(PowerPoint(g, p, None, None))

    fits = {}
    for g in spec.gammas:
        pts = [pt for pt in points if pt.gamma == g and pt.error is not None]
        if len(pts) >= 2:
            fits[g] = fit_line([pt.p_ext for pt in pts], [pt.error for pt in pts])
    return PowerSweep(spec.k_max, points, fits, traces if keep_traces else {})


def run_experiment(spec: ScenarioSpec, workers: int = 1):
    if spec.kind == "step_response":
        return step_response(spec, workers=workers)
    if spec.kind == "contact_loss":
        return contact_loss(spec, workers=workers)
    if spec.kind == "external_interaction":
        return external_interaction(spec, workers=workers)
    return constant_power_injection(spec, workers=workers, keep_traces=True)
