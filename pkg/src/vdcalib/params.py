"""Vehicle parameter container for the 8-DOF handling model.

The defaults correspond to a HMMWV-class vehicle. The measurable
parameters (masses, geometry, inertias, tire vertical stiffness) are the
values treated as known during calibration; the tire, roll and rolling
resistance values are interior points of the calibration priors.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

# Order of the scalar fields in the flat array handed to the numba kernels.
SCALAR_FIELDS = (
    "m", "m_uf", "m_ur",
    "J_x", "J_z", "J_xz", "J_w",
    "a", "b", "h", "c_f", "c_r",
    "h_rcf", "h_rcr",
    "k_phi_f", "k_phi_r", "b_phi_f", "b_phi_r",
    "k_tf", "k_tr",
    "C_xf", "C_xr", "C_yf", "C_yr",
    "rr", "r0", "mu",
    "h_uf", "h_ur",
    "gear_ratio", "max_brake_torque", "max_steer_angle",
    "g",
)
INDEX = {name: i for i, name in enumerate(SCALAR_FIELDS)}

# Measurable quantities that are never calibrated.
KNOWN_FIELDS = (
    "m", "m_uf", "m_ur", "J_x", "J_z", "J_xz", "a", "b", "h",
    "c_f", "c_r", "k_tf", "k_tr", "r0", "J_w", "h_rcf", "h_rcr",
)
CALIBRATABLE_FIELDS = (
    "C_xf", "C_xr", "C_yf", "C_yr",
    "k_phi_f", "k_phi_r", "b_phi_f", "b_phi_r", "rr",
)

_POSITIVE = (
    "m", "m_uf", "m_ur", "J_x", "J_z", "J_w", "a", "b", "h", "c_f", "c_r",
    "k_phi_f", "k_phi_r", "b_phi_f", "b_phi_r", "k_tf", "k_tr",
    "C_xf", "C_xr", "C_yf", "C_yr", "r0", "mu", "h_uf", "h_ur",
    "gear_ratio", "g",
)
_NONNEGATIVE = ("rr", "max_brake_torque", "max_steer_angle")


def _default_torque_map():
    # DC-motor style: flat up to 100 rad/s, then linear fall-off to zero.
    return ((0.0, 600.0), (100.0, 600.0), (700.0, 0.0))


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameters of the 8-DOF model (SI units).

    ``torque_map`` is a sequence of ``(motor_speed [rad/s], torque [N m])``
    pairs interpolated linearly and held flat outside its range.
    """

    m: float = 2097.85
    m_uf: float = 127.86
    m_ur: float = 129.98
    J_x: float = 1289.0
    J_z: float = 4519.0
    J_xz: float = 3.26
    J_w: float = 11.0
    a: float = 1.68
    b: float = 1.68
    h: float = 0.71
    c_f: float = 1.82
    c_r: float = 1.82
    h_rcf: float = 0.38
    h_rcr: float = 0.32
    k_phi_f: float = 40000.0
    k_phi_r: float = 40000.0
    b_phi_f: float = 10000.0
    b_phi_r: float = 10000.0
    k_tf: float = 326332.0
    k_tr: float = 326332.0
    C_xf: float = 25000.0
    C_xr: float = 28000.0
    C_yf: float = 50000.0
    C_yr: float = 50000.0
    rr: float = 0.0175
    r0: float = 0.47
    mu: float = 0.8
    h_uf: float = 0.47
    h_ur: float = 0.47
    gear_ratio: float = 10.0
    max_brake_torque: float = 4000.0
    max_steer_angle: float = 0.3
    g: float = 9.81
    torque_map: tuple = field(default_factory=_default_torque_map)

    def __post_init__(self):
        for name in _POSITIVE:
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val!r}")
        for name in _NONNEGATIVE:
            val = getattr(self, name)
            if not (np.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be non-negative, got {val!r}")
        if not np.isfinite(self.J_xz):
            raise ValueError("J_xz must be finite")
        tm = tuple((float(s), float(t)) for s, t in self.torque_map)
        if len(tm) < 1:
            raise ValueError("torque_map needs at least one point")
        speeds = np.array([s for s, _ in tm])
        torques = np.array([t for _, t in tm])
        if np.any(np.diff(speeds) <= 0):
            raise ValueError("torque_map speeds must be strictly increasing")
        if np.any(torques < 0):
            raise ValueError("torque_map torques must be non-negative")
        object.__setattr__(self, "torque_map", tm)

    # derived quantities
    @property
    def h_rc(self) -> float:
        return (self.h_rcf * self.b + self.h_rcr * self.a) / (self.a + self.b)

    @property
    def J_x_hat(self) -> float:
        return self.J_x + self.m * self.h_rc ** 2

    @property
    def m_total(self) -> float:
        return self.m + self.m_uf + self.m_ur

    def replace(self, **changes) -> "VehicleParams":
        return dataclasses.replace(self, **changes)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in SCALAR_FIELDS], dtype=np.float64)

    def torque_arrays(self):
        tm = np.asarray(self.torque_map, dtype=np.float64)
        return np.ascontiguousarray(tm[:, 0]), np.ascontiguousarray(tm[:, 1])

    def to_dict(self) -> dict:
        d = {k: float(getattr(self, k)) for k in SCALAR_FIELDS}
        d["torque_map"] = [list(p) for p in self.torque_map]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown vehicle parameter(s): {sorted(unknown)}")
        kw = {k: (tuple(tuple(p) for p in v) if k == "torque_map" else float(v))
              for k, v in d.items()}
        return cls(**kw)
