import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdcalib import ControlSample, ControlSchedule, VehicleParams, VehicleState, simulate, step
from vdcalib import dynamics as dyn
from vdcalib.driver import Keyframe, longitudinal_ramp

P = VehicleParams()


# -- parameters -----------------------------------------------------------

def test_derived_quantities():
    assert P.h_rc == pytest.approx((0.38 * 1.68 + 0.32 * 1.68) / 3.36)
    assert P.J_x_hat == pytest.approx(1289 + 2097.85 * P.h_rc ** 2)
    assert P.m_total == pytest.approx(2097.85 + 127.86 + 129.98)


@pytest.mark.parametrize("field,value", [("m", 0.0), ("J_z", -1.0), ("rr", -0.01), ("mu", 0.0)])
def test_params_reject_nonphysical(field, value):
    with pytest.raises(ValueError):
        P.replace(**{field: value})


def test_params_torque_map_validation():
    with pytest.raises(ValueError):
        P.replace(torque_map=((0, 100), (0, 50)))
    with pytest.raises(ValueError):
        P.replace(torque_map=((0, -1.0),))


def test_params_dict_round_trip():
    assert VehicleParams.from_dict(P.to_dict()) == P
    with pytest.raises(KeyError):
        VehicleParams.from_dict({"mass": 1.0})


# -- contact patch and slips ----------------------------------------------

def test_contact_patch_no_yaw():
    s = VehicleState(u=10.0)
    for w in dyn.WHEELS:
        assert dyn.contact_patch_velocity(s, P, w) == (10.0, 0.0)


def test_contact_patch_right_front():
    s = VehicleState(u=10.0, v=1.0, wz=0.5)
    ug, vg = dyn.contact_patch_velocity(s, P, "rf")
    assert ug == pytest.approx(10.455)
    assert vg == pytest.approx(1.84)


def test_contact_patch_left_rear():
    s = VehicleState(u=10.0, v=1.0, wz=0.5)
    ug, vg = dyn.contact_patch_velocity(s, P, "lr")
    assert ug == pytest.approx(9.545)
    assert vg == pytest.approx(0.16)


def test_contact_patch_unknown_wheel():
    with pytest.raises(ValueError):
        dyn.contact_patch_velocity(VehicleState(), P, "front")


def test_slips_free_rolling():
    s, a = dyn.compute_slips(10.0, 0.0, 10.0 / 0.47, 0.47, 0.0)
    assert s == pytest.approx(0.0, abs=1e-15)
    assert a == 0.0


def test_slips_drive():
    s, a = dyn.compute_slips(10.0, 0.0, 23.40426, 0.47, 0.0)
    assert s == pytest.approx(0.1, abs=1e-5)
    assert a == 0.0


def test_slips_angle():
    s, a = dyn.compute_slips(10.0, 1.0, 10.0 / 0.47, 0.47, 0.0)
    assert s == pytest.approx(0.0, abs=1e-12)
    assert a == pytest.approx(0.09967, abs=1e-5)


def test_slips_low_speed_regularised():
    s, a = dyn.compute_slips(0.0, 0.05, 1.0, 0.47, 0.0)
    assert math.isfinite(s) and math.isfinite(a)
    assert a == pytest.approx(math.atan(0.05 / dyn.EPS_V))


def test_slips_need_positive_radius():
    with pytest.raises(ValueError):
        dyn.compute_slips(10.0, 0.0, 1.0, 0.0, 0.0)


# -- vertical loads ---------------------------------------------------------

def test_static_load_front_left():
    fz, lifted = dyn.vertical_loads(VehicleState(), P)
    hand = 2097.85 * 9.81 * 1.68 / (2 * 3.36) + 127.86 * 9.81 / 2
    assert fz[0] == pytest.approx(hand, rel=1e-12)
    # same value rounded to 0.1 N
    assert fz[0] == pytest.approx(5772.2, abs=0.1)
    assert not lifted.any()


def test_static_loads_symmetric_and_sum():
    fz, _ = dyn.vertical_loads(VehicleState(), P)
    assert fz[0] == fz[1] and fz[2] == fz[3]
    total = (2097.85 + 127.86 + 129.98) * 9.81
    assert abs(fz.sum() - total) / total < 1e-9


def test_lateral_transfer_direction():
    # positive (vdot + wz u) means a left turn: load moves to the right wheels
    fz, _ = dyn.vertical_loads(VehicleState(lagged_vdot_term=3.0), P)
    assert fz[1] > fz[0] and fz[3] > fz[2]
    assert fz.sum() == pytest.approx(P.m_total * P.g)


def test_longitudinal_transfer_direction():
    fz, _ = dyn.vertical_loads(VehicleState(lagged_udot=2.0), P)
    assert fz[2] > fz[0]
    assert fz.sum() == pytest.approx(P.m_total * P.g)


def test_wheel_lift_clamps_and_flags():
    fz, lifted = dyn.vertical_loads(VehicleState(phi=0.5), P)
    assert np.all(fz >= 0)
    assert lifted[0] and lifted[2]
    assert not lifted[1]


# -- Fiala tire -------------------------------------------------------------

def test_fiala_longitudinal_elastic():
    assert dyn.fiala_longitudinal(0.05, 5000, 10000, 0.8) == pytest.approx(500.0)
    assert dyn.fiala_longitudinal_regime(0.05, 5000, 10000, 0.8) == "elastic"


def test_fiala_longitudinal_sliding():
    assert dyn.fiala_longitudinal(0.5, 5000, 10000, 0.8) == pytest.approx(4000 - 800)
    assert dyn.fiala_longitudinal_regime(0.5, 5000, 10000, 0.8) == "sliding"


def test_fiala_zero_inputs():
    assert dyn.fiala_longitudinal(0.0, 5000, 10000, 0.8) == 0.0
    assert dyn.fiala_lateral(0.0, 5000, 30000, 0.8) == 0.0
    assert dyn.fiala_longitudinal(0.3, 0.0, 10000, 0.8) == 0.0
    assert dyn.fiala_lateral(0.3, 0.0, 30000, 0.8) == 0.0


def test_fiala_lateral_elastic():
    alpha, fz, cy, mu = 0.05, 5000.0, 30000.0, 0.8
    h = 1 - cy * abs(math.tan(alpha)) / (3 * mu * fz)
    assert h == pytest.approx(0.874896, abs=1e-6)
    hand = -mu * fz * (1 - h ** 3)
    assert dyn.fiala_lateral(alpha, fz, cy, mu) == pytest.approx(hand, rel=1e-12)
    # reference value rounded to 0.02 %
    assert dyn.fiala_lateral(alpha, fz, cy, mu) == pytest.approx(-1321.0, rel=5e-4)


def test_fiala_lateral_sliding():
    alpha = math.atan(0.5)
    assert dyn.fiala_lateral(alpha, 5000, 30000, 0.8) == pytest.approx(-4000.0)
    assert dyn.fiala_lateral_regime(alpha, 5000, 30000, 0.8) == "sliding"


slips = st.floats(-5, 5, allow_nan=False)
loads = st.floats(0, 2e4, allow_nan=False)
stiff = st.floats(1e3, 1e5, allow_nan=False)
mus = st.floats(0.1, 1.5, allow_nan=False)


@given(slips, loads, stiff, mus)
def test_fiala_longitudinal_saturation_and_odd(s, fz, cx, mu):
    f = dyn.fiala_longitudinal(s, fz, cx, mu)
    assert abs(f) <= mu * fz * (1 + 1e-12)
    assert dyn.fiala_longitudinal(-s, fz, cx, mu) == -f


@given(st.floats(-1.5, 1.5, allow_nan=False), loads, stiff, mus)
def test_fiala_lateral_saturation_and_odd(a, fz, cy, mu):
    f = dyn.fiala_lateral(a, fz, cy, mu)
    assert abs(f) <= mu * fz * (1 + 1e-12)
    assert dyn.fiala_lateral(-a, fz, cy, mu) == -f


@given(st.floats(100, 2e4), stiff, mus)
def test_fiala_longitudinal_continuity(fz, cx, mu):
    s_crit = mu * fz / (2 * cx)
    elastic = cx * s_crit
    sliding = mu * fz - (mu * fz) ** 2 / (4 * s_crit * cx)
    assert abs(elastic - sliding) <= 1e-9 * abs(elastic)
    below = dyn.fiala_longitudinal(s_crit, fz, cx, mu)
    above = dyn.fiala_longitudinal(s_crit * (1 + 1e-13), fz, cx, mu)
    assert abs(below - above) <= 1e-9 * abs(below)


@given(st.floats(100, 2e4), stiff, mus)
def test_fiala_lateral_continuity(fz, cy, mu):
    alpha_c = math.atan(3 * mu * fz / cy)
    below = dyn.fiala_lateral(alpha_c * (1 - 1e-13), fz, cy, mu)
    above = dyn.fiala_lateral(alpha_c * (1 + 1e-13), fz, cy, mu)
    assert abs(below - above) <= 1e-9 * abs(above)


def test_tire_to_body():
    assert dyn.tire_to_body(3.0, 4.0, 0.0) == (3.0, 4.0)
    fx, fy = dyn.tire_to_body(100.0, 0.0, math.pi / 2)
    assert fx == pytest.approx(0.0, abs=1e-12) and fy == pytest.approx(100.0)


@given(st.floats(-math.pi, math.pi))
def test_tire_to_body_preserves_norm(delta):
    fx, fy = dyn.tire_to_body(3.0, 4.0, delta)
    assert math.hypot(fx, fy) == pytest.approx(5.0, rel=1e-12)


# -- wheel torques ----------------------------------------------------------

def test_wheel_torques_idle():
    assert dyn.wheel_torques(0.0, 0.0, 0.0, 5000.0, P) == (0.0, 0.0, 0.0)


def test_rolling_resistance_torque():
    _, _, tr = dyn.wheel_torques(0.0, 0.0, 10.0, 5000.0, P.replace(rr=0.015))
    assert tr == pytest.approx(75.0)
    _, _, tr = dyn.wheel_torques(0.0, 0.0, -10.0, 5000.0, P.replace(rr=0.015))
    assert tr == pytest.approx(-75.0)


def test_drive_torque_split():
    p = P.replace(torque_map=((0.0, 400.0),), gear_ratio=3.0)
    td, _, _ = dyn.wheel_torques(1.0, 0.0, 20.0, 5000.0, p)
    assert td == pytest.approx(300.0)


def test_brake_torque_opposes_spin():
    _, tb, _ = dyn.wheel_torques(0.0, 0.5, 10.0, 5000.0, P)
    assert tb == pytest.approx(0.5 * P.max_brake_torque)
    _, tb, _ = dyn.wheel_torques(0.0, 0.5, -10.0, 5000.0, P)
    assert tb == pytest.approx(-0.5 * P.max_brake_torque)


def test_torque_map_interpolation():
    td, _, _ = dyn.wheel_torques(1.0, 0.0, 40.0, 0.0, P)  # motor 400 rad/s
    assert td == pytest.approx(300.0 * P.gear_ratio / 4)


# -- chassis ----------------------------------------------------------------

def _tires(fx=(0, 0, 0, 0), fy=(0, 0, 0, 0)):
    z = np.zeros(4)
    return dyn.TireOutput(s=z, alpha=z, r_inst=np.full(4, 0.46), F_z=np.full(4, 5000.0),
                          F_xt=np.array(fx, float), F_yt=np.array(fy, float),
                          F_xg=np.array(fx, float), F_yg=np.array(fy, float),
                          sliding_x=z > 0, sliding_y=z > 0)


def test_chassis_zero_forces():
    acc = dyn.chassis_accelerations(VehicleState(), _tires(), P)
    assert acc == (0.0, 0.0, 0.0, 0.0)


def test_chassis_symmetric_straight_line():
    udot, vdot, wzdot, wxdot = dyn.chassis_accelerations(
        VehicleState(u=10.0), _tires(fx=(500, 500, 700, 700)), P)
    assert udot == pytest.approx(2400 / P.m_total)
    assert vdot == 0.0 and wzdot == 0.0 and wxdot == 0.0


def test_chassis_solve_matches_dense_solver():
    state = VehicleState(u=15.0, v=-0.4, wz=0.3, wx=0.05, phi=0.02)
    tires = _tires(fx=(300, 200, 400, 100), fy=(-2000, -2500, -1800, -2100))
    udot, mat, rhs = dyn.chassis_system(state, tires, P)
    _, vdot, wzdot, wxdot = dyn.chassis_accelerations(state, tires, P)
    sol = np.array([vdot, wzdot, wxdot])
    ref = np.linalg.solve(mat, rhs)
    np.testing.assert_allclose(sol, ref, rtol=1e-12)
    resid = np.abs(mat @ sol - rhs) / np.maximum(np.abs(rhs), np.abs(mat * sol).max(axis=1))
    assert resid.max() < 1e-9
    assert np.allclose(mat, mat.T)


def test_chassis_matrix_entries():
    _, mat, _ = dyn.chassis_system(VehicleState(), _tires(), P)
    c1 = P.m_ur * P.b - P.m_uf * P.a
    assert mat[0, 0] == pytest.approx(P.m_total)
    assert mat[0, 1] == pytest.approx(-c1)
    assert mat[0, 2] == pytest.approx(-P.h_rc * P.m)
    assert mat[1, 1] == P.J_z
    assert mat[1, 2] == P.J_xz
    assert mat[2, 2] == pytest.approx(P.J_x_hat)


def test_left_turn_forces_give_left_yaw():
    fy = (2000, 2000, 2000, 2000)
    _, _, wzdot, _ = dyn.chassis_accelerations(VehicleState(u=10.0), _tires(fy=(2000, 2000, 0, 0)), P)
    assert wzdot > 0
    _, vdot, _, wxdot = dyn.chassis_accelerations(VehicleState(u=10.0), _tires(fy=fy), P)
    assert vdot > 0
    assert wxdot != 0.0  # lateral force couples into roll


# -- integration ------------------------------------------------------------

def test_step_equilibrium():
    s = step(VehicleState(), ControlSample(), P, 5e-3)
    assert s == VehicleState()


def test_step_rejects_bad_dt():
    with pytest.raises(ValueError):
        step(VehicleState(), ControlSample(), P, 0.0)


def test_step_non_finite_raises():
    with pytest.raises(FloatingPointError, match="t=1.5"):
        step(VehicleState(u=float("nan")), ControlSample(), P, 5e-3, t=1.5)


def test_step_stores_lagged_terms():
    s0 = VehicleState.rolling(10.0, P)
    s1 = step(s0, ControlSample(throttle=1.0), P, 5e-3)
    assert s1.lagged_udot == pytest.approx((s1.u - s0.u) / 5e-3)
    assert s1.x == pytest.approx(s1.u * 5e-3)


def test_straight_line_symmetry_10k_steps():
    sched = ControlSchedule([Keyframe(0.0, throttle=0.0), Keyframe(20.0, throttle=0.6),
                             Keyframe(40.0, throttle=0.0, braking=0.2), Keyframe(50.0)])
    ts = simulate(P, sched, VehicleState.rolling(5.0, P), 0.0, 50.0, dt=5e-3, sample_dt=5e-3)
    assert len(ts) == 10001
    for ch in ("v", "wz", "wx", "phi", "psi", "y"):
        assert np.max(np.abs(ts[ch])) < 1e-12
    assert np.array_equal(ts["omega_lf"], ts["omega_rf"])
    assert np.array_equal(ts["omega_lr"], ts["omega_rr"])


def test_first_order_convergence():
    sched = longitudinal_ramp(duration=5.0)
    init = VehicleState.rolling(5.0, P)

    def u_end(dt):
        return simulate(P, sched, init, 0.0, 5.0, dt=dt, sample_dt=0.01)["u"][-1]

    # Richardson-extrapolated reference removes the reference run's own O(dt) error
    ref = 2.0 * u_end(6.25e-4) - u_end(1.25e-3)
    ratio = (u_end(5e-3) - ref) / (u_end(2.5e-3) - ref)
    assert ratio == pytest.approx(2.0, abs=0.3)


def test_simulate_sample_count_and_determinism():
    sched = longitudinal_ramp()
    init = VehicleState.rolling(5.0, P)
    a = simulate(P, sched, init, 0.0, 1.0)
    b = simulate(P, sched, init, 0.0, 1.0)
    assert len(a) == 101
    assert a.names == list(dyn.CHANNELS)
    assert a == b


def test_simulate_grid_errors():
    sched = longitudinal_ramp()
    init = VehicleState.rolling(5.0, P)
    with pytest.raises(ValueError):
        simulate(P, sched, init, 1.0, 1.0)
    with pytest.raises(ValueError):
        simulate(P, sched, init, 0.0, 1.0, dt=3e-3, sample_dt=0.01)


def test_simulate_divergence_reports_time():
    with pytest.raises(dyn.SimulationError) as err:
        simulate(P, longitudinal_ramp(), VehicleState(u=float("inf")), 2.0, 3.0)
    assert err.value.t == pytest.approx(2.0)


def _euler_reference(params, state, controls, dt, n):
    """Plain explicit Euler built from the per-operation functions."""
    x = state
    for _ in range(n):
        tires = dyn.tire_forces(x, controls, params)
        udot, vdot, wzdot, wxdot = dyn.chassis_accelerations(x, tires, params)
        om = []
        for i in range(4):
            td, tb, tr = dyn.wheel_torques(controls.throttle, controls.braking, x.omega[i],
                                           tires.F_z[i], params)
            om.append(x.omega[i] + dt * (td - tb - tr - tires.r_inst[i] * tires.F_xt[i]) / params.J_w)
        x = VehicleState(u=x.u + dt * udot, v=x.v + dt * vdot, wz=x.wz + dt * wzdot,
                         wx=x.wx + dt * wxdot, phi=x.phi + dt * x.wx, psi=x.psi + dt * x.wz,
                         omega=tuple(om), lagged_udot=udot - x.wz * x.v,
                         lagged_vdot_term=vdot + x.wz * x.u)
    return x


def test_coastdown_decreasing_and_matches_euler_reference():
    init = VehicleState.rolling(20.0, P)
    ts = simulate(P, ControlSchedule([Keyframe(0.0)]), init, 0.0, 2.0)
    assert np.all(np.diff(ts["u"][1:]) < 0)
    fine = simulate(P, ControlSchedule([Keyframe(0.0)]), init, 0.0, 0.5, dt=1e-4)
    ref = _euler_reference(P, init, ControlSample(), 1e-4, 5000)
    assert fine["u"][-1] == pytest.approx(ref.u, abs=1e-3)
    assert fine["omega_lf"][-1] == pytest.approx(ref.omega[0], abs=1e-2)
    assert np.all(np.diff(fine["u"]) < 0)


def test_cornering_response_matches_euler_reference():
    init = VehicleState.rolling(12.0, P)
    ctl = ControlSample(throttle=0.3, steering=0.1)
    fine = simulate(P, ControlSchedule([Keyframe(0.0, throttle=0.3, steering=0.1)]), init,
                    0.0, 0.5, dt=1e-4)
    ref = _euler_reference(P, init, ctl, 1e-4, 5000)
    assert fine["wz"][-1] == pytest.approx(ref.wz, rel=2e-3)
    assert fine["v"][-1] == pytest.approx(ref.v, rel=5e-3, abs=1e-4)
    assert fine["phi"][-1] == pytest.approx(ref.phi, rel=5e-3)


def test_state_helpers():
    s = VehicleState.rolling(10.0, P)
    assert VehicleState.from_array(s.to_array()) == s
    assert VehicleState.from_dict(s.to_dict()) == s
    assert s.is_finite()
    r = P.r0 - dyn.static_loads(P)[0] / P.k_tf
    assert s.omega[0] == pytest.approx(10.0 / r)
    with pytest.raises(ValueError):
        VehicleState(omega=(1.0, 2.0))
    w = dyn.warm_start(VehicleState(lagged_udot=1.0, lagged_vdot_term=2.0))
    assert w.lagged_udot == 0.0 and w.lagged_vdot_term == 0.0


def test_tire_radius_within_bounds():
    tires = dyn.tire_forces(VehicleState.rolling(10.0, P), ControlSample(), P)
    assert np.all(tires.r_inst > 0) and np.all(tires.r_inst <= P.r0)
    assert np.all(tires.F_z >= 0)
