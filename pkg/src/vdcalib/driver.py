"""Open-loop control schedules and the standard calibration maneuvers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSample

_BOUNDS = {"throttle": (0.0, 1.0), "steering": (-1.0, 1.0), "braking": (0.0, 1.0)}


@dataclass(frozen=True)
class Keyframe:
    t: float
    throttle: float = 0.0
    steering: float = 0.0
    braking: float = 0.0


class ControlSchedule:
    """Piecewise-linear throttle/steering/braking inputs.

    Values are interpolated linearly between keyframes and held constant
    before the first and after the last keyframe.
    """

    def __init__(self, keyframes, name: str = ""):
        kfs = [k if isinstance(k, Keyframe) else Keyframe(*k) if not isinstance(k, dict)
               else Keyframe(**k) for k in keyframes]
        if not kfs:
            raise ValueError("a control schedule needs at least one keyframe")
        times = np.array([k.t for k in kfs], dtype=float)
        if np.any(np.diff(times) <= 0):
            raise ValueError("keyframe times must be strictly increasing")
        for k in kfs:
            for ch, (lo, hi) in _BOUNDS.items():
                val = getattr(k, ch)
                if not lo <= val <= hi:
                    raise ValueError(f"{ch}={val} at t={k.t} outside [{lo}, {hi}]")
        self.keyframes = tuple(kfs)
        self.name = name
        self._t = times
        self._v = {ch: np.array([getattr(k, ch) for k in kfs], dtype=float) for ch in _BOUNDS}

    def __repr__(self):
        return f"ControlSchedule({self.name!r}, {len(self.keyframes)} keyframes)"

    def __eq__(self, other):
        return isinstance(other, ControlSchedule) and self.keyframes == other.keyframes

    def eval(self, t: float) -> ControlSample:
        thr, steer, brk = self.eval_many(np.array([t], dtype=float))
        return ControlSample(float(thr[0]), float(steer[0]), float(brk[0]))

    def eval_many(self, t):
        t = np.asarray(t, dtype=float)
        return tuple(np.interp(t, self._t, self._v[ch]) for ch in ("throttle", "steering", "braking"))

    def to_dict(self) -> dict:
        return {"name": self.name,
                "keyframes": [[k.t, k.throttle, k.steering, k.braking] for k in self.keyframes]}

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSchedule":
        return cls([tuple(k) if not isinstance(k, dict) else k for k in d["keyframes"]],
                   name=d.get("name", ""))


def longitudinal_ramp(duration: float = 10.0, throttle_max: float = 0.5) -> ControlSchedule:
    """Straight-line acceleration: throttle ramps from 0 to ``throttle_max``."""
    return ControlSchedule([Keyframe(0.0), Keyframe(duration, throttle=throttle_max)],
                           name="longitudinal_ramp")


def lateral_steer(accel_time: float = 7.0, steer_time: float = 3.7, steer_max: float = 0.2,
                  throttle: float = 0.7, throttle_ramp: float = 1.0) -> ControlSchedule:
    """Accelerate straight, then ramp the steering linearly (positive = left)."""
    return ControlSchedule([
        Keyframe(0.0),
        Keyframe(throttle_ramp, throttle=throttle),
        Keyframe(accel_time, throttle=throttle),
        Keyframe(accel_time + steer_time, throttle=throttle, steering=steer_max),
    ], name="lateral_steer")


def coastdown(accel_time: float = 5.0, release_time: float = 0.5,
              throttle: float = 1.0) -> ControlSchedule:
    """Full acceleration, then throttle released and the vehicle coasts."""
    return ControlSchedule([
        Keyframe(0.0, throttle=throttle),
        Keyframe(accel_time, throttle=throttle),
        Keyframe(accel_time + release_time, throttle=0.0),
    ], name="coastdown")


def acceptance_test(ramp_time: float = 3.5, throttle_max: float = 0.8,
                    step_steer: float = 0.15, step_hold: float = 2.45,
                    right_ramp_time: float = 3.0, right_steer: float = -0.15,
                    return_time: float = 0.5, brake_time: float = 2.0,
                    braking: float = 0.3, edge: float = 0.05) -> ControlSchedule:
    """Held-out test maneuver.

    Throttle ramp, then throttle released together with a left step steer,
    a right ramp steer, steering back to centre, and braking at the end.
    ``edge`` is the rise time used for the step inputs.
    """
    t1 = ramp_time
    t2 = t1 + edge + step_hold
    t3 = t2 + right_ramp_time
    t4 = t3 + return_time
    t5 = t4 + brake_time
    return ControlSchedule([
        Keyframe(0.0),
        Keyframe(t1, throttle=throttle_max),
        Keyframe(t1 + edge, steering=step_steer),
        Keyframe(t2, steering=step_steer),
        Keyframe(t3, steering=right_steer),
        Keyframe(t4, steering=0.0),
        Keyframe(t4 + edge, braking=braking),
        Keyframe(t5, braking=braking),
    ], name="acceptance_test")


MANEUVERS = {
    "longitudinal_ramp": longitudinal_ramp,
    "lateral_steer": lateral_steer,
    "coastdown": coastdown,
    "acceptance_test": acceptance_test,
}


def maneuver(name: str, **kwargs) -> ControlSchedule:
    try:
        return MANEUVERS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown maneuver {name!r}; choose from {sorted(MANEUVERS)}") from None
