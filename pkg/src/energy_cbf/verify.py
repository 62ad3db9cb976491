"""Oracle suites behind ``energy-cbf verify``.

Each suite returns a list of :class:`Check` records holding the worst-case
residual found and the bound it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracles, qp
from .dynamics import (RobotModel, State, compute_terms, desk_arm, energy_rate, kinetic_energy,
                       mass_matrix_rate)
from .safety_filter import AGNOSTIC, AWARE, FilterConfig, apply_filter, closed_form, psi
from .simulator import Command, SimConfig, energy_audit, rate_limit_velocity, run


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    worst: float
    bound: float
    passed: bool

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.suite}: {self.name}  worst={self.worst:.3e}  bound={self.bound:.1e}"


def _check(suite, name, worst, bound, below=True):
    worst = float(worst)
    ok = worst <= bound if below else worst >= bound
    return Check(suite, name, worst, bound, bool(ok and np.isfinite(worst)))


def random_model(rng, n: int = 3, gravity: float = 9.81, coupled: bool = False) -> RobotModel:
    """Random arm; ``coupled`` draws a non-identity actuation matrix."""
    length = rng.uniform(0.2, 0.6, n)
    mass = rng.uniform(0.5, 5.0, n)
    B = np.eye(n) + 0.3 * rng.normal(size=(n, n)) if coupled else None
    return RobotModel(mass=mass, length=length, com=length * rng.uniform(0.2, 0.8, n),
                      inertia=rng.uniform(0.01, 0.3, n), gravity=gravity, actuation=B,
                      base_angle=rng.uniform(-np.pi, np.pi))


def random_state(rng, n: int, speed: float = 2.0) -> State:
    return State(rng.uniform(-np.pi, np.pi, n), rng.normal(0.0, speed, n))


# ---------------------------------------------------------------------------


def dynamics_suite(model: RobotModel | None = None, samples: int = 200, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    models = [model or desk_arm()] + [random_model(rng, n) for n in (2, 3, 4)]
    sym = skew = grad = lag = ke = rate = 0.0
    min_eig = np.inf
    for m in models:
        n = m.n_links
        for _ in range(samples):
            st = random_state(rng, n)
            T = compute_terms(m, st)
            sym = max(sym, np.max(np.abs(T.D - T.D.T)))
            min_eig = min(min_eig, np.linalg.eigvalsh(T.D)[0])
            S = mass_matrix_rate(m, st) - 2.0 * T.C
            v = rng.normal(size=n)
            skew = max(skew, abs(v @ S @ v))
        for _ in range(max(samples // 10, 5)):
            st = random_state(rng, n)
            T = compute_terms(m, st)
            grad = max(grad, np.max(np.abs(T.g - oracles.potential_gradient(m, st.q))))
            lag = max(lag, np.max(np.abs(T.D - oracles.lagrangian_mass_matrix(m, st.q))))
            ke = max(ke, abs(kinetic_energy(m, st) - oracles.link_energies(m, st.q, st.qdot).sum()))
            u = rng.normal(size=n)
            tau = rng.normal(size=n)
            qdd = np.linalg.solve(T.D, m.B @ u + tau - T.C @ st.qdot - T.g)
            eps = 1e-6
            kp = kinetic_energy(m, State(st.q + eps * st.qdot, st.qdot + eps * qdd))
            km = kinetic_energy(m, State(st.q - eps * st.qdot, st.qdot - eps * qdd))
            rate = max(rate, abs((kp - km) / (2 * eps) - energy_rate(m, st, u, tau)))
    return [
        _check("dynamics", "D symmetric", sym, 1e-12),
        _check("dynamics", "D positive definite (min eigenvalue)", min_eig, 0.0, below=False),
        _check("dynamics", "skew symmetry v'(Ddot - 2C)v", skew, 1e-10),
        _check("dynamics", "g vs potential gradient (finite differences)", grad, 1e-6),
        _check("dynamics", "D vs Lagrangian oracle", lag, 1e-6),
        _check("dynamics", "kinetic energy vs per-link energies", ke, 1e-6),
        _check("dynamics", "energy rate vs finite difference", rate, 1e-5),
    ]


def random_qp(rng, m: int, boxed: bool = True, inside: bool = False):
    u_nom = rng.normal(0.0, 3.0, m)
    a = rng.normal(size=m)
    if rng.random() < 0.2:
        a[rng.integers(m)] = 0.0
    lower = upper = None
    if boxed:
        lower = -rng.uniform(0.5, 5.0, m)
        upper = rng.uniform(0.5, 5.0, m)
        if inside:
            u_nom = rng.uniform(lower, upper)
    b = float(a @ u_nom) + rng.uniform(0.0, 8.0)
    return qp.QpProblem(u_nom, a, b, lower, upper)


def qp_suite(samples: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    probs, sols, feasible = [], [], []
    while len(feasible) < samples:
        p = random_qp(rng, int(rng.integers(1, 8)))
        s = qp.solve(p)
        probs.append(p)
        sols.append(s)
        if s.status == qp.OPTIMAL:
            feasible.append((p, s))
    kkt = max((s.kkt_residual for _, s in feasible), default=0.0)

    M = 7
    U = np.zeros((len(feasible), M))
    A = np.zeros_like(U)
    LO = np.zeros_like(U)
    HI = np.zeros_like(U)
    B = np.zeros(len(feasible))
    for i, (p, _) in enumerate(feasible):
        k = p.u_nom.size
        U[i, :k], A[i, :k], LO[i, :k], HI[i, :k], B[i] = p.u_nom, p.a, p.lower, p.upper, p.b
    u_ref, _, _ = oracles.qp_projected_gradient(U, A, B, LO, HI)
    obj = 0.0
    for i, (p, s) in enumerate(feasible):
        k = p.u_nom.size
        f = np.sum((s.u - p.u_nom) ** 2)
        f_ref = np.sum((u_ref[i, :k] - p.u_nom) ** 2)
        obj = max(obj, abs(f - f_ref))

    proj = 0.0
    for _ in range(samples // 2):
        p = random_qp(rng, int(rng.integers(1, 8)), boxed=False)
        if np.linalg.norm(p.a) <= 1e-6:
            continue
        proj = max(proj, np.max(np.abs(qp.solve(p).u - qp.halfspace_projection(p.u_nom, p.a, p.b))))

    infeasible_ok = all(np.all(s.u >= p.lower) and np.all(s.u <= p.upper)
                        for p, s in zip(probs, sols) if s.status == qp.INFEASIBLE)
    return [
        _check("qp", f"max KKT residual ({len(feasible)} feasible boxed problems)", kkt, 1e-9),
        _check("qp", "objective vs projected-gradient oracle", obj, 1e-6),
        _check("qp", "halfspace projection vs solve (box-free)", proj, 1e-10),
        _check("qp", "infeasible fallback stays in the box", 0.0 if infeasible_ok else 1.0, 0.0),
    ]


def random_filter_case(rng, model: RobotModel | None = None, boxed: bool = False):
    m = model or random_model(rng, int(rng.integers(2, 5)), gravity=rng.choice([0.0, 9.81]),
                              coupled=rng.random() < 0.5)
    n = m.n_links
    st = random_state(rng, n)
    mode = AWARE if rng.random() < 0.5 else AGNOSTIC
    lower = upper = None
    if boxed:
        upper = rng.uniform(5.0, 60.0, n)
        lower = -upper
    cfg = FilterConfig(k_max=rng.uniform(0.0, 3.0), gamma=rng.uniform(0.5, 100.0), mode=mode,
                       lower=lower, upper=upper)
    u_nom = rng.normal(0.0, 20.0, n)
    if boxed:
        u_nom = np.clip(u_nom, lower, upper)
    tau = rng.normal(0.0, 5.0, n)
    return m, st, u_nom, tau, cfg


def filter_suite(samples: int = 10_000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    p_safe = -np.inf
    bitwise_ok = True
    tight = 0.0
    for i in range(samples):
        m, st, u_nom, tau, cfg = random_filter_case(rng, boxed=i % 4 == 3)
        res = apply_filter(m, st, u_nom, tau, cfg)
        p_safe = max(p_safe, res.p_safe, float(st.qdot @ m.B @ (res.u - u_nom)))
        if res.psi >= 0 and res.u is not u_nom:
            bitwise_ok = False
        if res.intervened and cfg.lower is None and res.status == "ok":
            tight = max(tight, abs(psi(m, st, res.u, tau, cfg)) / (1.0 + abs(res.psi)))

    cf = 0.0
    count = 0
    while count < 1000:
        m, st, u_nom, tau, cfg = random_filter_case(rng)
        res = apply_filter(m, st, u_nom, tau, cfg)
        if not res.intervened or res.status != "ok":
            continue
        count += 1
        ref = closed_form(m, st, u_nom, tau, cfg)
        cf = max(cf, np.max(np.abs(res.u - ref)) / (1.0 + np.max(np.abs(ref))))
    return [
        _check("filter", f"filter power q'B u_safe <= 0 ({samples} calls)", max(p_safe, 0.0), 1e-9),
        _check("filter", "nominal passed through bitwise when psi >= 0", 0.0 if bitwise_ok else 1.0, 0.0),
        _check("filter", "active constraint is tight (relative psi)", tight, 1e-9),
        _check("filter", "QP vs closed form (1000 interventions, relative)", cf, 1e-9),
    ]


class _Free:
    """Unforced swing from a tilted rest pose."""

    def __init__(self, q0):
        self.q0 = np.asarray(q0, dtype=float)

    def initial_state(self, model):
        return State(self.q0, np.zeros_like(self.q0))

    def command(self, t, model, state, terms):
        return Command(np.zeros(model.n_links))


def audit_residual(model: RobotModel, substeps: int, dt: float = 0.01, duration: float = 1.0) -> tuple:
    sim = SimConfig(dt_control=dt, physics_substeps=substeps, duration=duration)
    trace = run(model, sim, FilterConfig(k_max=1e6, gamma=1.0), _Free([0.3, 0.4, -0.2]),
                filter_on=False)
    return energy_audit(trace)


def simulator_suite(seed: int = 0) -> list[Check]:
    model = desk_arm()
    res1, _ = audit_residual(model, 8, duration=2.0)
    res2, _ = audit_residual(model, 16, duration=2.0)
    ratio = abs(res1) / max(abs(res2), 1e-300)

    from .scenarios import load_scenario, run_experiment
    spec = load_scenario("exp2").with_overrides(gammas=[10.0], duration=1.5)
    worst = 0.0
    for tr in run_experiment(spec).values():
        r, k = energy_audit(tr)
        worst = max(worst, abs(r) / k)

    rng = np.random.default_rng(seed)
    qmax = np.array([50.0, 80.0, 120.0])
    dt = 1e-3
    prev = np.zeros(3)
    over = 0.0
    for _ in range(100_000):
        out = rate_limit_velocity(prev, prev + rng.normal(0.0, 5.0, 3), dt, qmax)
        over = max(over, np.max(np.abs(out - prev) - dt * qmax))
        prev = out
    smooth = np.sin(np.linspace(0.0, 2.0, 2001))[:, None] * np.array([1.0, 0.5, 2.0])
    prev = smooth[0]
    lag = 0.0
    for raw in smooth[1:]:
        out = rate_limit_velocity(prev, raw, dt, qmax)
        lag = max(lag, np.max(np.abs(out - raw)))
        prev = out
    return [
        _check("simulator", "energy audit residual / max K_e (contact-loss runs)", worst, 1e-3),
        _check("simulator", "RK4 order: residual ratio on substep halving >= 12", ratio, 12.0, below=False),
        _check("simulator", "RK4 order: residual ratio on substep halving <= 20", ratio, 20.0),
        _check("simulator", "rate limiter increment excess over dt*qddot_max", max(over, 0.0), 1e-12),
        _check("simulator", "rate limiter is identity on smooth input", lag, 0.0),
    ]


SUITES = {
    "dynamics": dynamics_suite,
    "qp": qp_suite,
    "filter": filter_suite,
    "simulator": simulator_suite,
}
