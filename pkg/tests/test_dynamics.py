import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energy_cbf import oracles
from energy_cbf.dynamics import (ModelError, RobotModel, State, compute_terms, end_effector,
                                 energy_rate, forward_dynamics, jacobian, kinetic_energy,
                                 load_model, mass_matrix, mass_matrix_rate, model_from_dict,
                                 potential_energy)
from energy_cbf.simulator import Command, SimConfig, run
from energy_cbf.safety_filter import FilterConfig

angles = st.lists(st.floats(-np.pi, np.pi), min_size=3, max_size=3)
rates = st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3)


def other_arm(gravity=9.81):
    # parameters unrelated to the desk arm
    return RobotModel(mass=[2.2, 1.3, 0.7], length=[0.5, 0.35, 0.3], com=[0.2, 0.2, 0.1],
                      inertia=[0.04, 0.02, 0.008], gravity=gravity, base_angle=0.4)


# -- pendulum closed forms ---------------------------------------------------


def test_pendulum_inertia_and_gravity_at_rest(pendulum):
    T = compute_terms(pendulum, State([0.0], [0.0]))
    assert T.D == pytest.approx(np.array([[0.25]]), abs=1e-15)
    assert T.g == pytest.approx([0.0], abs=1e-15)


def test_pendulum_kinetic_energy(pendulum):
    assert kinetic_energy(pendulum, State([0.3], [2.0])) == pytest.approx(0.5)
    assert kinetic_energy(pendulum, State([0.3], [0.0])) == 0.0


def test_pendulum_small_oscillation_period(pendulum):
    m, l_c, g = 1.0, 0.5, 9.81
    expected = 2 * np.pi * np.sqrt(m * l_c**2 / (m * g * l_c))

    class Release:
        def initial_state(self, model):
            return State([0.02], [0.0])

        def command(self, t, model, state, terms):
            return Command(np.zeros(1))

    tr = run(pendulum, SimConfig(duration=5.0), FilterConfig(1e6, 1.0), Release(), filter_on=False)
    q = tr.q[:, 0]
    idx = np.flatnonzero((q[:-1] > 0) & (q[1:] <= 0))
    # linear interpolation of downward zero crossings
    tc = tr.t[idx] + q[idx] / (q[idx] - q[idx + 1]) * 1e-3
    period = np.mean(np.diff(tc))
    assert abs(period / expected - 1) < 0.01


# -- structural properties ---------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(angles, rates)
def test_mass_matrix_symmetric_positive_definite(q, qd):
    model = other_arm()
    D = compute_terms(model, State(q, qd)).D
    assert np.max(np.abs(D - D.T)) <= 1e-12
    assert np.linalg.eigvalsh(D)[0] > 0


def test_positive_definite_over_many_configurations(arm, rng):
    for q in rng.uniform(-np.pi, np.pi, (1000, 3)):
        assert np.linalg.eigvalsh(mass_matrix(arm, q))[0] > 0


@settings(max_examples=200, deadline=None)
@given(angles, rates)
def test_skew_symmetry(q, qd):
    model = other_arm()
    s = State(q, qd)
    S = mass_matrix_rate(model, s) - 2.0 * compute_terms(model, s).C
    for v in np.random.default_rng(0).normal(size=(100, 3)):
        assert abs(v @ S @ v) <= 1e-10


def test_mass_matrix_rate_matches_finite_difference(rng):
    model = other_arm()
    s = State(rng.normal(size=3), rng.normal(size=3))
    eps = 1e-6
    fd = (mass_matrix(model, s.q + eps * s.qdot) - mass_matrix(model, s.q - eps * s.qdot)) / (2 * eps)
    assert np.max(np.abs(fd - mass_matrix_rate(model, s))) < 1e-8


def test_mass_matrix_matches_lagrangian_oracle(rng):
    model = other_arm()
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        assert np.max(np.abs(mass_matrix(model, q) - oracles.lagrangian_mass_matrix(model, q))) < 1e-6


def test_kinetic_energy_matches_per_link_energies(rng):
    model = other_arm()
    for _ in range(20):
        s = State(rng.uniform(-np.pi, np.pi, 3), rng.normal(size=3))
        ref = oracles.link_energies(model, s.q, s.qdot).sum()
        assert kinetic_energy(model, s) == pytest.approx(ref, abs=1e-7)


def test_gravity_is_potential_gradient(rng):
    model = other_arm()
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        g = compute_terms(model, State(q, np.zeros(3))).g
        assert np.max(np.abs(g - oracles.potential_gradient(model, q))) <= 1e-6
        assert potential_energy(model, q) == pytest.approx(oracles.potential_energy(model, q), abs=1e-12)


def test_jacobian_matches_finite_difference(rng):
    model = other_arm()
    q = rng.normal(size=3)
    eps = 1e-6
    fd = np.column_stack([(end_effector(model, q + eps * e) - end_effector(model, q - eps * e)) / (2 * eps)
                          for e in np.eye(3)])
    assert np.max(np.abs(fd - jacobian(model, q))) < 1e-9
    T = compute_terms(model, State(q, np.zeros(3)), orientation=True)
    assert T.J.shape == (3, 3) and np.all(T.J[2] == 1.0)


def test_q_zero_lays_links_along_x():
    model = other_arm()
    flat = RobotModel(model.mass, model.length, model.com, model.inertia)
    assert end_effector(flat, np.zeros(3)) == pytest.approx([1.15, 0.0])


# -- forward dynamics and energy rate ------------------------------------------


def test_exact_compensation_gives_zero_acceleration(rng):
    model = other_arm()
    B = np.array([[1.0, 0.2, 0.0], [0.0, 1.0, -0.1], [0.3, 0.0, 1.0]])
    model = RobotModel(model.mass, model.length, model.com, model.inertia, actuation=B)
    s = State(rng.normal(size=3), rng.normal(size=3))
    T = compute_terms(model, s)
    u = np.linalg.solve(B, T.C @ s.qdot + T.g)
    assert np.max(np.abs(forward_dynamics(model, s, u, np.zeros(3)))) < 1e-10


def test_forward_dynamics_satisfies_equation_of_motion(rng):
    model = other_arm()
    s = State(rng.normal(size=3), rng.normal(size=3))
    u, tau = rng.normal(size=3), rng.normal(size=3)
    T = compute_terms(model, s)
    qdd = forward_dynamics(model, s, u, tau)
    assert np.max(np.abs(T.D @ qdd - (u + tau - T.C @ s.qdot - T.g))) < 1e-10


def test_free_fall_conserves_total_energy(arm):
    class Drop:
        def initial_state(self, model):
            return State([0.3, 0.4, -0.2], np.zeros(3))

        def command(self, t, model, state, terms):
            return Command(np.zeros(3))

    tr = run(arm, SimConfig(duration=1.0), FilterConfig(1e6, 1.0), Drop(), filter_on=False)
    total = tr.K_e + np.array([potential_energy(arm, q) for q in tr.q])
    assert np.ptp(total) < 1e-9 * np.max(tr.K_e) + 1e-12


def test_energy_rate_examples(arm, flat_arm):
    assert energy_rate(arm, State(np.ones(3), np.zeros(3)), np.ones(3), np.ones(3)) == 0.0
    assert energy_rate(flat_arm, State(np.ones(3), np.array([1.0, -2.0, 0.5]))) == 0.0


def test_energy_rate_matches_trajectory_finite_difference(arm):
    class Torque:
        def initial_state(self, model):
            return State([0.1, 0.5, -0.4], [0.5, -0.3, 1.0])

        def command(self, t, model, state, terms):
            return Command(np.array([2.0, -1.0, 0.5]))

    def worst(dt):
        tr = run(arm, SimConfig(duration=0.2, dt_control=dt, physics_substeps=10),
                 FilterConfig(1e6, 1.0), Torque(), filter_on=False)
        k = np.arange(1, len(tr) - 1)
        fd = (tr.K_e[k + 1] - tr.K_e[k - 1]) / (2 * dt)
        exact = [energy_rate(arm, State(tr.q[i], tr.qdot[i]), tr.u[i]) for i in k]
        return np.max(np.abs(fd - exact))

    coarse, fine = worst(2e-3), worst(1e-3)
    assert coarse < 1e-3
    assert 3.0 < coarse / fine < 5.0  # second order


# -- validation --------------------------------------------------------------


@pytest.mark.parametrize("field,value,match", [
    ("mass", [1.0, -1.0], "mass"),
    ("length", [0.0, 1.0], "length"),
    ("inertia", [-0.1, 0.1], "inertia"),
    ("com", [0.1], "com"),
])
def test_model_validation(field, value, match):
    kwargs = dict(mass=[1.0, 1.0], length=[0.5, 0.5], com=[0.25, 0.25], inertia=[0.01, 0.01])
    kwargs[field] = value
    with pytest.raises(ModelError, match=match):
        RobotModel(**kwargs)


def test_actuation_and_limits_validation():
    base = dict(mass=[1.0, 1.0], length=[0.5, 0.5], com=[0.25, 0.25], inertia=[0.01, 0.01])
    with pytest.raises(ModelError, match="actuation"):
        RobotModel(**base, actuation=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(ModelError, match="torque_limits"):
        RobotModel(**base, torque_limits=[1.0, 0.0])
    m = RobotModel(**base, torque_limits=[5.0, np.inf])
    assert m.torque_limits[1] == np.inf


def test_state_validation(arm):
    with pytest.raises(ValueError):
        State([0.0, np.nan], [0.0, 0.0])
    with pytest.raises(ValueError):
        State([0.0, 0.0], [0.0])
    with pytest.raises(ValueError, match="joints"):
        compute_terms(arm, State([0.0, 0.0], [0.0, 0.0]))


def test_load_model_round_trip(tmp_path):
    path = tmp_path / "arm.toml"
    path.write_text("[robot]\ngravity = 0.0\n[links]\nmass = [1.0, 2.0]\nlength = [0.3, 0.4]\n")
    model = load_model(path)
    assert model.gravity == 0.0
    assert model.com == pytest.approx([0.15, 0.2])
    assert model.inertia == pytest.approx([0.09 / 12, 2 * 0.16 / 12])


def test_load_model_errors_name_file_and_field(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[links]\nmass = [1.0, -2.0]\nlength = [0.3, 0.4]\n")
    with pytest.raises(ModelError, match=r"bad\.toml.*mass"):
        load_model(path)
    with pytest.raises(ModelError, match="not found"):
        load_model(tmp_path / "missing.toml")
    (tmp_path / "syntax.toml").write_text("[links\n")
    with pytest.raises(ModelError, match="syntax.toml"):
        load_model(tmp_path / "syntax.toml")
    with pytest.raises(ModelError, match="robot.colour"):
        model_from_dict({"robot": {"colour": 1}, "links": {"mass": [1.0], "length": [1.0]}})


def test_builtin_model_file_matches_desk_arm(arm):
    from energy_cbf.scenarios import CONFIG_DIR
    loaded = load_model(CONFIG_DIR / "desk_arm.toml")
    for name in ("mass", "length", "com", "inertia"):
        assert np.array_equal(getattr(loaded, name), getattr(arm, name))
