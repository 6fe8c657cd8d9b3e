import numpy as np
import pytest
from hypothesis import given, strategies as st

from vdcalib.driver import (ControlSchedule, Keyframe, MANEUVERS, acceptance_test, coastdown,
                            lateral_steer, longitudinal_ramp, maneuver)


def test_eval_midpoint():
    sched = ControlSchedule([Keyframe(0.0, throttle=0.0), Keyframe(10.0, throttle=0.5)])
    assert sched.eval(5.0).throttle == pytest.approx(0.25)


def test_eval_holds_outside_range():
    sched = ControlSchedule([Keyframe(1.0, throttle=0.2, steering=-0.1),
                             Keyframe(2.0, throttle=0.6, braking=0.3)])
    before = sched.eval(0.0)
    assert (before.throttle, before.steering, before.braking) == (0.2, -0.1, 0.0)
    after = sched.eval(50.0)
    assert (after.throttle, after.steering, after.braking) == (0.6, 0.0, 0.3)


def test_empty_schedule_rejected():
    with pytest.raises(ValueError):
        ControlSchedule([])


def test_keyframes_must_increase():
    with pytest.raises(ValueError):
        ControlSchedule([Keyframe(1.0), Keyframe(1.0)])


@pytest.mark.parametrize("kf", [Keyframe(0.0, throttle=1.5), Keyframe(0.0, steering=-2.0),
                                Keyframe(0.0, braking=-0.1)])
def test_out_of_range_inputs_rejected(kf):
    with pytest.raises(ValueError):
        ControlSchedule([kf])


def test_eval_many_matches_eval():
    sched = acceptance_test()
    ts = np.linspace(-1, 15, 77)
    thr, steer, brk = sched.eval_many(ts)
    for i, t in enumerate(ts):
        c = sched.eval(t)
        assert (c.throttle, c.steering, c.braking) == (thr[i], steer[i], brk[i])


def test_dict_round_trip():
    for name in MANEUVERS:
        s = maneuver(name)
        assert ControlSchedule.from_dict(s.to_dict()) == s


def test_unknown_maneuver():
    with pytest.raises(ValueError, match="unknown maneuver"):
        maneuver("figure_eight")


def test_longitudinal_ramp_shape():
    s = longitudinal_ramp()
    assert s.eval(0.0).throttle == 0.0
    assert s.eval(10.0).throttle == pytest.approx(0.5)
    assert s.eval(4.0).steering == 0.0


def test_lateral_steer_shape():
    s = lateral_steer()
    assert s.eval(6.9).steering == 0.0
    assert s.eval(7.0 + 3.7).steering == pytest.approx(0.2)
    assert s.eval(7.0 + 1.85).steering == pytest.approx(0.1)


def test_coastdown_shape():
    s = coastdown()
    assert s.eval(2.0).throttle == 1.0
    assert s.eval(6.0).throttle == 0.0
    assert s.eval(6.0).braking == 0.0


def test_acceptance_test_shape():
    s = acceptance_test()
    assert s.eval(3.5).throttle == pytest.approx(0.8)
    assert s.eval(4.0).throttle == 0.0
    assert s.eval(4.0).steering == pytest.approx(0.15)
    assert s.eval(9.0).steering == pytest.approx(-0.15)
    assert s.eval(9.5).steering == 0.0
    assert s.eval(11.5).braking == pytest.approx(0.3)
    assert s.eval(8.0).braking == 0.0


@given(st.floats(-5, 20))
def test_schedules_respect_bounds(t):
    for name in MANEUVERS:
        c = maneuver(name).eval(t)
        assert 0 <= c.throttle <= 1 and -1 <= c.steering <= 1 and 0 <= c.braking <= 1
