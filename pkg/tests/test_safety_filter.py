import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energy_cbf.dynamics import RobotModel, State, compute_terms, kinetic_energy
from energy_cbf.safety_filter import (AGNOSTIC, AWARE, DEGENERATE, INFEASIBLE_CLIPPED, FilterConfig,
                                      apply_filter, barrier, barrier_rate, closed_form, constraint,
                                      psi)
from energy_cbf.verify import random_filter_case


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(k_max=-1.0, gamma=1.0)
    with pytest.raises(ValueError):
        FilterConfig(k_max=1.0, gamma=0.0)
    with pytest.raises(ValueError):
        FilterConfig(k_max=1.0, gamma=1.0, mode="psychic")
    with pytest.raises(ValueError):
        FilterConfig(k_max=1.0, gamma=1.0, eps_v=0.0)


def test_with_torque_limits(arm):
    limited = RobotModel(arm.mass, arm.length, arm.com, arm.inertia, torque_limits=[10.0, 5.0, 2.0])
    cfg = FilterConfig.with_torque_limits(limited, k_max=1.0, gamma=5.0)
    assert np.array_equal(cfg.upper, [10.0, 5.0, 2.0]) and np.array_equal(cfg.lower, [-10.0, -5.0, -2.0])
    assert FilterConfig.with_torque_limits(arm, k_max=1.0, gamma=5.0).upper is None


# -- barrier, rate, margin -----------------------------------------------------


def test_barrier_examples(arm):
    cfg = FilterConfig(k_max=1.0, gamma=50.0)
    assert barrier(arm, State(np.ones(3), np.zeros(3)), cfg) == 1.0
    s = State([0.2, 0.3, 0.1], [0.4, -0.2, 0.9])
    at_limit = FilterConfig(k_max=kinetic_energy(arm, s), gamma=1.0)
    assert barrier(arm, s, at_limit) == pytest.approx(0.0, abs=1e-15)
    assert barrier(arm, s, cfg) == pytest.approx(1.0 - kinetic_energy(arm, s))


def test_barrier_rate_examples(arm, flat_arm):
    cfg = FilterConfig(k_max=1.0, gamma=50.0)
    assert barrier_rate(arm, State(np.ones(3), np.zeros(3)), np.ones(3), None, cfg) == 0.0
    qd = np.array([1.0, 0.0, 0.0])
    u = np.array([2.0, 7.0, -3.0])  # qdot' B u = 2 W
    assert barrier_rate(flat_arm, State(np.zeros(3), qd), u, None, cfg) == pytest.approx(-2.0)


def test_barrier_rate_aware_subtracts_external_power(flat_arm):
    qd = np.array([0.5, -1.0, 0.2])
    tau = np.array([1.0, 2.0, -1.0])
    s = State(np.zeros(3), qd)
    agn = barrier_rate(flat_arm, s, np.zeros(3), tau, FilterConfig(1.0, 10.0, AGNOSTIC))
    awa = barrier_rate(flat_arm, s, np.zeros(3), tau, FilterConfig(1.0, 10.0, AWARE))
    assert agn == 0.0
    assert awa == pytest.approx(-float(qd @ tau))


def test_barrier_rate_matches_finite_difference(arm, rng):
    # along the true dynamics with no external torque, hdot = -dK/dt
    from energy_cbf.dynamics import forward_dynamics
    cfg = FilterConfig(k_max=2.0, gamma=1.0)
    for _ in range(10):
        s = State(rng.normal(size=3), rng.normal(size=3))
        u = rng.normal(size=3)
        qdd = forward_dynamics(arm, s, u)
        eps = 1e-6
        hp = barrier(arm, State(s.q + eps * s.qdot, s.qdot + eps * qdd), cfg)
        hm = barrier(arm, State(s.q - eps * s.qdot, s.qdot - eps * qdd), cfg)
        assert barrier_rate(arm, s, u, None, cfg) == pytest.approx((hp - hm) / (2 * eps), abs=1e-6)


def test_psi_examples(arm, rng):
    cfg = FilterConfig(k_max=1.0, gamma=50.0)
    assert psi(arm, State(np.ones(3), np.zeros(3)), rng.normal(size=3), None, cfg) == pytest.approx(50.0)
    for _ in range(10):
        s = State(rng.normal(size=3), rng.normal(size=3))
        u = rng.normal(size=3)
        T = compute_terms(arm, s)
        h = 1.0 - 0.5 * s.qdot @ T.D @ s.qdot
        hdot = s.qdot @ T.g - s.qdot @ u
        assert psi(arm, s, u, None, cfg) == pytest.approx(hdot + 50.0 * h, rel=1e-12)


def test_psi_zero_at_boundary_with_zero_rate(flat_arm):
    s = State([0.1, 0.2, 0.3], [0.3, 0.1, -0.2])
    cfg = FilterConfig(k_max=kinetic_energy(flat_arm, s), gamma=7.0)
    assert psi(flat_arm, s, np.zeros(3), None, cfg) == pytest.approx(0.0, abs=1e-14)


def test_constraint_assembly_matches_margin(arm, rng):
    s = State(rng.normal(size=3), rng.normal(size=3))
    tau = rng.normal(size=3)
    u = rng.normal(size=3)
    for mode in (AGNOSTIC, AWARE):
        cfg = FilterConfig(k_max=0.4, gamma=12.0, mode=mode)
        a, b, h = constraint(arm, s, tau, cfg)
        assert float(a @ u) - b == pytest.approx(psi(arm, s, u, tau, cfg), rel=1e-12)


# -- filter ------------------------------------------------------------------


def moving_state():
    return State([0.3, -0.5, 0.8], [1.5, -2.0, 2.5])


def test_inactive_filter_returns_nominal_object(flat_arm):
    cfg = FilterConfig(k_max=100.0, gamma=10.0)
    u_nom = np.array([1.0, -2.0, 0.5])
    res = apply_filter(flat_arm, moving_state(), u_nom, None, cfg)
    assert res.u is u_nom
    assert not res.intervened and np.all(res.u_safe == 0.0) and res.p_safe == 0.0


def test_intervention_matches_closed_form_and_power(arm):
    cfg = FilterConfig(k_max=0.2, gamma=10.0)
    s = moving_state()
    u_nom = 5.0 * s.qdot  # drives energy in
    res = apply_filter(arm, s, u_nom, None, cfg)
    assert res.intervened and res.status == "ok"
    assert np.max(np.abs(res.u - closed_form(arm, s, u_nom, None, cfg))) <= 1e-9
    assert res.p_safe == pytest.approx(res.psi, rel=1e-12)
    assert res.p_safe < 0
    assert psi(arm, s, res.u, None, cfg) == pytest.approx(0.0, abs=1e-9)
    assert res.hdot == pytest.approx(-cfg.gamma * res.h, rel=1e-9)


def test_aware_with_zero_estimate_equals_agnostic(arm, rng):
    for _ in range(50):
        s = State(rng.normal(size=3), rng.normal(0, 3, size=3))
        u = rng.normal(0, 10, size=3)
        a = apply_filter(arm, s, u, np.zeros(3), FilterConfig(0.3, 20.0, AWARE))
        b = apply_filter(arm, s, u, np.zeros(3), FilterConfig(0.3, 20.0, AGNOSTIC))
        assert np.array_equal(a.u, b.u)


def test_aware_cancels_estimated_external_power(flat_arm):
    s = moving_state()
    tau = np.array([3.0, 1.0, 2.0])
    cfg = FilterConfig(k_max=kinetic_energy(flat_arm, s), gamma=50.0, mode=AWARE)
    res = apply_filter(flat_arm, s, np.zeros(3), tau, cfg)
    # at the boundary the commanded power must cancel the estimated external power
    assert float(s.qdot @ res.u) + float(s.qdot @ tau) == pytest.approx(0.0, abs=1e-9)


def test_degenerate_velocity_passes_nominal(flat_arm):
    cfg = FilterConfig(k_max=0.0, gamma=10.0)
    s = State(np.zeros(3), [1e-8, 0.0, 0.0])
    u_nom = np.array([1.0, 1.0, 1.0])
    res = apply_filter(flat_arm, s, u_nom, None, cfg)
    assert res.status == DEGENERATE and res.u is u_nom and res.p_safe == 0.0


def test_infeasible_box_uses_most_dissipating_torque(flat_arm):
    s = moving_state()
    cfg = FilterConfig(k_max=0.0, gamma=50.0, lower=-np.full(3, 0.5), upper=np.full(3, 0.5))
    res = apply_filter(flat_arm, s, np.zeros(3), None, cfg)
    assert res.status == INFEASIBLE_CLIPPED
    assert np.array_equal(res.u, -0.5 * np.sign(s.qdot))
    assert res.p_safe < 0


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_filter_power_is_never_positive(seed, boxed):
    rng = np.random.default_rng(seed)
    m, s, u_nom, tau, cfg = random_filter_case(rng, boxed=boxed)
    res = apply_filter(m, s, u_nom, tau, cfg)
    assert res.p_safe <= 1e-9
    assert float(s.qdot @ m.B @ (res.u - u_nom)) <= 1e-9
    assert res.intervened == (res.psi < 0)
    if not res.intervened:
        assert res.u is u_nom


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_box_free_intervention_is_tight(seed):
    rng = np.random.default_rng(seed)
    m, s, u_nom, tau, cfg = random_filter_case(rng)
    res = apply_filter(m, s, u_nom, tau, cfg)
    if res.intervened and res.status == "ok":
        scale = 1.0 + abs(res.psi)
        assert abs(psi(m, s, res.u, tau, cfg)) <= 1e-9 * scale
        ref = closed_form(m, s, u_nom, tau, cfg)
        assert np.max(np.abs(res.u - ref)) <= 1e-9 * (1.0 + np.max(np.abs(ref)))


def test_filtered_input_is_lipschitz_away_from_degeneracy(arm, rng):
    cfg = FilterConfig(k_max=0.3, gamma=20.0)
    worst = 0.0
    for _ in range(30):
        q, qd, u = rng.normal(size=3), rng.normal(0, 2, size=3), rng.normal(0, 10, size=3)
        base = apply_filter(arm, State(q, qd), u, None, cfg).u
        for delta in (1e-4, 1e-5, 1e-6):
            dq, dqd, du = (rng.normal(size=3) * delta for _ in range(3))
            moved = apply_filter(arm, State(q + dq, qd + dqd), u + du, None, cfg).u
            step = np.linalg.norm(np.concatenate([dq, dqd, du]))
            worst = max(worst, np.linalg.norm(moved - base) / step)
    # the difference quotient stays bounded as the perturbation shrinks
    assert worst < 1e4


def test_closed_form_without_intervention_copies_nominal(flat_arm):
    u = np.array([1.0, 2.0, 3.0])
    out = closed_form(flat_arm, State(np.zeros(3), np.zeros(3)), u, None, FilterConfig(1.0, 1.0))
    assert np.array_equal(out, u) and out is not u
