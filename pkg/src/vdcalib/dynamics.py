"""8-DOF vehicle handling model with Fiala tires.

Degrees of freedom are the chassis longitudinal, lateral, yaw and roll
motions plus the spin of the four wheels. Vertical tire loads follow a
quasi-static load-transfer model that uses the accelerations of the
previous step, and the equations of motion are advanced with a
half-implicit (semi-implicit Euler) scheme.

All numerical work happens in numba-compiled scalar kernels; the Python
functions in this module are thin, dataclass-friendly wrappers around
them. Wheels are always ordered ``lf, rf, lr, rr``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

from .params import INDEX as _I, VehicleParams

WHEELS = ("lf", "rf", "lr", "rr")
# Channels produced by simulate(), in state-vector order.
CHANNELS = ("u", "v", "wz", "wx", "phi", "psi", "x", "y",
            "omega_lf", "omega_rf", "omega_lr", "omega_rr")
N_STATE = 14
LAG_UDOT = 12
LAG_VDOT = 13

EPS_V = 0.1  # low-speed floor for slip denominators, m/s

# parameter indices, baked in as compile-time constants
_M, _MUF, _MUR = _I["m"], _I["m_uf"], _I["m_ur"]
_JX, _JZ, _JXZ, _JW = _I["J_x"], _I["J_z"], _I["J_xz"], _I["J_w"]
_A, _B, _H, _CF, _CR = _I["a"], _I["b"], _I["h"], _I["c_f"], _I["c_r"]
_HRCF, _HRCR = _I["h_rcf"], _I["h_rcr"]
_KPF, _KPR, _BPF, _BPR = _I["k_phi_f"], _I["k_phi_r"], _I["b_phi_f"], _I["b_phi_r"]
_KTF, _KTR = _I["k_tf"], _I["k_tr"]
_CXF, _CXR, _CYF, _CYR = _I["C_xf"], _I["C_xr"], _I["C_yf"], _I["C_yr"]
_RR, _R0, _MU = _I["rr"], _I["r0"], _I["mu"]
_HUF, _HUR = _I["h_uf"], _I["h_ur"]
_GR, _TBMAX, _DMAX, _G = (_I["gear_ratio"], _I["max_brake_torque"],
                          _I["max_steer_angle"], _I["g"])

# columns of the per-wheel tire table
T_S, T_ALPHA, T_R, T_FZ, T_FXT, T_FYT, T_FXG, T_FYG, T_SLIDE_X, T_SLIDE_Y, T_LIFT = range(11)
N_TIRE_COLS = 11

# TBB in this image is too old for numba; the built-in pool is enough here
if nb.config.THREADING_LAYER == "default":
    nb.config.THREADING_LAYER = "workqueue"

_jit = nb.njit(cache=True, fastmath=False)


# --------------------------------------------------------------------------
# scalar kernels
# --------------------------------------------------------------------------

@_jit
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@_jit
def _patch_velocity(u, v, wz, y_w, x_w):
    # wheel at (x_w, y_w) in the body frame, y positive to the left
    return u - wz * y_w, v + wz * x_w


@_jit
def _slips(u_g, v_g, omega_w, r_inst, delta):
    return _slips_cs(u_g, v_g, omega_w, r_inst, delta, math.cos(delta), math.sin(delta))


@_jit
def _slips_cs(u_g, v_g, omega_w, r_inst, delta, cd, sd):
    v_roll = u_g * cd + v_g * sd
    s = (r_inst * omega_w - v_roll) / max(abs(v_roll), EPS_V)
    if u_g >= 0.0:
        u_c = max(u_g, EPS_V)
    else:
        u_c = min(u_g, -EPS_V)
    alpha = math.atan(v_g / u_c) - delta
    return s, alpha


@_jit
def _fiala_long(s, fz, cx, mu):
    if fz <= 0.0 or s == 0.0:
        return 0.0, False
    mfz = mu * abs(fz)
    s_crit = mfz / (2.0 * cx)
    if abs(s) <= s_crit:
        return cx * s, False
    f1 = mfz
    f2 = (mu * fz) ** 2 / (4.0 * abs(s) * cx)
    return _sign(s) * (f1 - f2), True


@_jit
def _fiala_lat(alpha, fz, cy, mu):
    if fz <= 0.0 or alpha == 0.0:
        return 0.0, False
    mfz = mu * abs(fz)
    hh = 1.0 - cy * abs(math.tan(alpha)) / (3.0 * mfz)
    if hh > 0.0:
        return -mfz * (1.0 - hh * hh * hh) * _sign(alpha), False
    return -mu * fz * _sign(alpha), True


@_jit
def _rotate(fxt, fyt, delta):
    return _rotate_cs(fxt, fyt, math.cos(delta), math.sin(delta))


@_jit
def _rotate_cs(fxt, fyt, cd, sd):
    return fxt * cd - fyt * sd, fxt * sd + fyt * cd


@_jit
def _vertical_loads(P, phi, wx, lag_ax, lag_ay, out):
    """Fill out[0:4] with clamped loads; return number of lifted wheels."""
    m = P[_M]
    a = P[_A]
    b = P[_B]
    g = P[_G]
    cf = P[_CF]
    cr = P[_CR]
    L = a + b
    zf = m * g * b / (2.0 * L) + P[_MUF] * g / 2.0
    zr = m * g * a / (2.0 * L) + P[_MUR] * g / 2.0
    ff = (P[_MUF] * P[_HUF] / cf + m * b * (P[_H] - P[_HRCF]) / (cf * L)) * lag_ay
    fr = (P[_MUR] * P[_HUR] / cr + m * a * (P[_H] - P[_HRCR]) / (cr * L)) * lag_ay
    fc = (m * P[_H] + P[_MUF] * P[_HUF] + P[_MUR] * P[_HUR]) * lag_ax / (2.0 * L)
    rollf = (P[_KPF] * phi + P[_BPF] * wx) / cf
    rollr = (P[_KPR] * phi + P[_BPR] * wx) / cr
    out[0] = zf - ff - rollf - fc
    out[1] = zf + ff + rollf - fc
    out[2] = zr - fr - rollr + fc
    out[3] = zr + fr + rollr + fc
    lifted = 0
    for i in range(4):
        if out[i] < 0.0:
            out[i] = 0.0
            lifted += 1
    return lifted


@_jit
def _interp(x, xs, ys):
    n = xs.shape[0]
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    j = 1
    while xs[j] < x:
        j += 1
    w = (x - xs[j - 1]) / (xs[j] - xs[j - 1])
    return ys[j - 1] + w * (ys[j] - ys[j - 1])


@_jit
def _wheel_torques(throttle, braking, omega_w, fz, P, tq_s, tq_t):
    gr = P[_GR]
    td = throttle * _interp(omega_w * gr, tq_s, tq_t) * gr / 4.0
    sw = _sign(omega_w)
    tb = braking * P[_TBMAX] * sw
    tr = P[_RR] * abs(fz) * sw
    return td, tb, tr


@_jit
def _tires(x, delta, P, tab, fz):
    """Evaluate all four tires for state x; fill tab (4 x N_TIRE_COLS)."""
    u = x[0]
    v = x[1]
    wz = x[2]
    lifted = _vertical_loads(P, x[4], x[3], x[LAG_UDOT], x[LAG_VDOT], fz)
    half_f = 0.5 * P[_CF]
    half_r = 0.5 * P[_CR]
    cdel = math.cos(delta)
    sdel = math.sin(delta)
    for i in range(4):
        front = i < 2
        if front:
            x_w = P[_A]
            kt = P[_KTF]
            cx = P[_CXF]
            cy = P[_CYF]
            dw = delta
            cd = cdel
            sd = sdel
        else:
            x_w = -P[_B]
            kt = P[_KTR]
            cx = P[_CXR]
            cy = P[_CYR]
            dw = 0.0
            cd = 1.0
            sd = 0.0
        if i % 2 == 0:
            y_w = half_f if front else half_r
        else:
            y_w = -half_f if front else -half_r
        r = P[_R0] - fz[i] / kt
        if r < 1e-3 * P[_R0]:
            r = 1e-3 * P[_R0]
        ug, vg = _patch_velocity(u, v, wz, y_w, x_w)
        s, alpha = _slips_cs(ug, vg, x[8 + i], r, dw, cd, sd)
        fxt, slx = _fiala_long(s, fz[i], cx, P[_MU])
        fyt, sly = _fiala_lat(alpha, fz[i], cy, P[_MU])
        fxg, fyg = _rotate_cs(fxt, fyt, cd, sd)
        tab[i, T_S] = s
        tab[i, T_ALPHA] = alpha
        tab[i, T_R] = r
        tab[i, T_FZ] = fz[i]
        tab[i, T_FXT] = fxt
        tab[i, T_FYT] = fyt
        tab[i, T_FXG] = fxg
        tab[i, T_FYG] = fyg
        tab[i, T_SLIDE_X] = 1.0 if slx else 0.0
        tab[i, T_SLIDE_Y] = 1.0 if sly else 0.0
        tab[i, T_LIFT] = 1.0 if fz[i] == 0.0 else 0.0
    return lifted


@_jit
def _chassis_system(x, tab, P, mat, rhs):
    """Assemble the coupled lateral/yaw/roll system and the explicit udot."""
    u = x[0]
    v = x[1]
    wz = x[2]
    wx = x[3]
    phi = x[4]
    m = P[_M]
    a = P[_A]
    b = P[_B]
    L = a + b
    hrc = (P[_HRCF] * b + P[_HRCR] * a) / L
    mt = m + P[_MUF] + P[_MUR]
    jxh = P[_JX] + m * hrc * hrc
    c1 = P[_MUR] * b - P[_MUF] * a
    c3 = hrc * m
    sfx = tab[0, T_FXG] + tab[1, T_FXG] + tab[2, T_FXG] + tab[3, T_FXG]
    sfy = tab[0, T_FYG] + tab[1, T_FYG] + tab[2, T_FYG] + tab[3, T_FYG]
    udot = wz * v + (sfx + (P[_MUF] * a - P[_MUR] * b) * wz * wz
                     - 2.0 * hrc * m * wz * wx) / mt
    mz = ((tab[0, T_FYG] + tab[1, T_FYG]) * a - (tab[2, T_FYG] + tab[3, T_FYG]) * b
          + (tab[1, T_FXG] - tab[0, T_FXG]) * P[_CF] / 2.0
          + (tab[3, T_FXG] - tab[2, T_FXG]) * P[_CR] / 2.0)
    mx = (m * P[_G] * hrc * phi - (P[_KPF] + P[_KPR]) * phi
          - (P[_BPF] + P[_BPR]) * wx)
    # unknowns (vdot, wzdot, wxdot)
    mat[0, 0] = mt
    mat[0, 1] = -c1
    mat[0, 2] = -c3
    mat[1, 0] = -c1
    mat[1, 1] = P[_JZ]
    mat[1, 2] = P[_JXZ]
    mat[2, 0] = -c3
    mat[2, 1] = P[_JXZ]
    mat[2, 2] = jxh
    rhs[0] = sfy - mt * wz * u
    rhs[1] = mz + c1 * wz * u
    rhs[2] = mx + c3 * wz * u
    return udot


@_jit
def _solve3(A, r, out):
    # cofactors of A; the solution is adj(A) r / det(A)
    c00 = A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
    c01 = A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]
    c02 = A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]
    det = A[0, 0] * c00 + A[0, 1] * c01 + A[0, 2] * c02
    if det == 0.0 or not math.isfinite(det):
        return False
    c10 = A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]
    c11 = A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
    c12 = A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]
    c20 = A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]
    c21 = A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]
    c22 = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    out[0] = (c00 * r[0] + c10 * r[1] + c20 * r[2]) / det
    out[1] = (c01 * r[0] + c11 * r[1] + c21 * r[2]) / det
    out[2] = (c02 * r[0] + c12 * r[1] + c22 * r[2]) / det
    return True


@_jit
def _residual3(A, r, sol):
    worst = 0.0
    for i in range(3):
        lhs = A[i, 0] * sol[0] + A[i, 1] * sol[1] + A[i, 2] * sol[2]
        scale = abs(r[i])
        for j in range(3):
            scale = max(scale, abs(A[i, j] * sol[j]))
        if scale > 0.0:
            worst = max(worst, abs(lhs - r[i]) / scale)
    return worst


@_jit
def _accelerations(x, throttle, steering, braking, P, tq_s, tq_t, ws):
    """Fill ws.acc = (udot, vdot, wzdot, wxdot, omegadot x4).

    Returns (lifted wheel count, relative 3x3 residual); residual < 0 flags
    a singular system.
    """
    tab, acc, fz, mat, rhs, sol = ws
    delta = steering * P[_DMAX]
    lifted = _tires(x, delta, P, tab, fz)
    acc[0] = _chassis_system(x, tab, P, mat, rhs)
    if not _solve3(mat, rhs, sol):
        return lifted, -1.0
    acc[1] = sol[0]
    acc[2] = sol[1]
    acc[3] = sol[2]
    for i in range(4):
        td, tb, tr = _wheel_torques(throttle, braking, x[8 + i], tab[i, T_FZ], P, tq_s, tq_t)
        acc[4 + i] = (td - tb - tr - tab[i, T_R] * tab[i, T_FXT]) / P[_JW]
    return lifted, _residual3(mat, rhs, sol)


@_jit
def _workspace():
    return (np.empty((4, N_TIRE_COLS)), np.empty(8), np.empty(4),
            np.empty((3, 3)), np.empty(3), np.empty(3))


@_jit
def _step(x, throttle, steering, braking, P, tq_s, tq_t, dt, ws):
    lifted, resid = _accelerations(x, throttle, steering, braking, P, tq_s, tq_t, ws)
    acc = ws[1]
    u0 = x[0]
    v0 = x[1]
    wz0 = x[2]
    # lagged load-transfer accelerations for the next step
    x[LAG_UDOT] = acc[0] - wz0 * v0
    x[LAG_VDOT] = acc[1] + wz0 * u0
    # velocities first ...
    x[0] = u0 + dt * acc[0]
    x[1] = v0 + dt * acc[1]
    x[2] = wz0 + dt * acc[2]
    x[3] = x[3] + dt * acc[3]
    for i in range(4):
        x[8 + i] = x[8 + i] + dt * acc[4 + i]
    # ... then configuration with the updated velocities
    x[4] = x[4] + dt * x[3]
    x[5] = x[5] + dt * x[2]
    cp = math.cos(x[5])
    sp = math.sin(x[5])
    x[6] = x[6] + dt * (x[0] * cp - x[1] * sp)
    x[7] = x[7] + dt * (x[0] * sp + x[1] * cp)
    return lifted, resid


@_jit
def _finite(x):
    for i in range(N_STATE):
        if not math.isfinite(x[i]):
            return False
    return True


@_jit
def _run(x0, thr, steer, brk, P, tq_s, tq_t, dt, every, out, diag):
    """Integrate len(thr) steps, recording x[0:12] every `every` steps.

    diag = (failed step index or -1, lifted-wheel events, max residual).
    """
    x = x0.copy()
    ws = _workspace()
    n = thr.shape[0]
    for c in range(12):
        out[0, c] = x[c]
    diag[0] = -1.0
    diag[1] = 0.0
    diag[2] = 0.0
    k = 1
    for i in range(n):
        lifted, resid = _step(x, thr[i], steer[i], brk[i], P, tq_s, tq_t, dt, ws)
        diag[1] += lifted
        if resid < 0.0 or not _finite(x):
            diag[0] = i
            return x
        if resid > diag[2]:
            diag[2] = resid
        if (i + 1) % every == 0:
            for c in range(12):
                out[k, c] = x[c]
            k += 1
    return x


@nb.njit(cache=True, parallel=True)
def _batch_sse(Pmat, x0, thr, steer, brk, tq_s, tq_t, dt, every,
               data, sel, wts, limit, sse, status):
    """Simulate every parameter row and accumulate per-channel squared error.

    data[k, j] is compared with channel sel[j] at sample k (k = 0 is the
    initial state). Row i is abandoned as soon as sum_j wts[i, j] * sse[i, j]
    exceeds limit[i] (status 2); status 1 marks a non-finite state.
    """
    n_part = Pmat.shape[0]
    n_sel = sel.shape[0]
    n = thr.shape[0]
    for p in nb.prange(n_part):
        P = Pmat[p]
        x = x0.copy()
        ws = _workspace()
        for j in range(n_sel):
            d = x[sel[j]] - data[0, j]
            sse[p, j] = d * d
        status[p] = 0
        k = 1
        for i in range(n):
            lifted, resid = _step(x, thr[i], steer[i], brk[i], P, tq_s, tq_t, dt, ws)
            if resid < 0.0 or not _finite(x):
                status[p] = 1
                break
            if (i + 1) % every == 0:
                tot = 0.0
                for j in range(n_sel):
                    d = x[sel[j]] - data[k, j]
                    sse[p, j] += d * d
                    tot += wts[p, j] * sse[p, j]
                k += 1
                if tot > limit[p]:
                    status[p] = 2
                    break


# --------------------------------------------------------------------------
# Python-facing API
# --------------------------------------------------------------------------

@dataclass
class VehicleState:
    """Chassis, pose and wheel-spin state.

    ``lagged_udot`` and ``lagged_vdot_term`` hold (udot - wz*v) and
    (vdot + wz*u) from the previous step and feed the load transfer.
    """

    u: float = 0.0
    v: float = 0.0
    wz: float = 0.0
    wx: float = 0.0
    phi: float = 0.0
    psi: float = 0.0
    x: float = 0.0
    y: float = 0.0
    omega: tuple = (0.0, 0.0, 0.0, 0.0)
    lagged_udot: float = 0.0
    lagged_vdot_term: float = 0.0

    def __post_init__(self):
        self.omega = tuple(float(w) for w in self.omega)
        if len(self.omega) != 4:
            raise ValueError("omega needs four wheel speeds (lf, rf, lr, rr)")

    def to_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.wz, self.wx, self.phi, self.psi,
                         self.x, self.y, *self.omega,
                         self.lagged_udot, self.lagged_vdot_term], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        a = [float(v) for v in arr]
        return cls(u=a[0], v=a[1], wz=a[2], wx=a[3], phi=a[4], psi=a[5],
                   x=a[6], y=a[7], omega=tuple(a[8:12]),
                   lagged_udot=a[12], lagged_vdot_term=a[13])

    @classmethod
    def rolling(cls, u: float, params: VehicleParams) -> "VehicleState":
        """Straight-line state at speed ``u`` with free-rolling wheels."""
        loads = static_loads(params)
        radii = [params.r0 - loads[i] / (params.k_tf if i < 2 else params.k_tr)
                 for i in range(4)]
        return cls(u=u, omega=tuple(u / r for r in radii))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("u", "v", "wz", "wx", "phi", "psi", "x", "y",
                                           "lagged_udot", "lagged_vdot_term")}
        d["omega"] = list(self.omega)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleState":
        return cls(**d)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_array())))


@dataclass(frozen=True)
class ControlSample:
    throttle: float = 0.0
    steering: float = 0.0
    braking: float = 0.0


@dataclass
class TireOutput:
    """Per-wheel tire quantities (arrays of length 4, order lf, rf, lr, rr)."""

    s: np.ndarray
    alpha: np.ndarray
    r_inst: np.ndarray
    F_z: np.ndarray
    F_xt: np.ndarray
    F_yt: np.ndarray
    F_xg: np.ndarray
    F_yg: np.ndarray
    sliding_x: np.ndarray
    sliding_y: np.ndarray
    lifted: np.ndarray = field(default_factory=lambda: np.zeros(4, bool))

    @classmethod
    def _from_table(cls, tab):
        return cls(s=tab[:, T_S].copy(), alpha=tab[:, T_ALPHA].copy(),
                   r_inst=tab[:, T_R].copy(), F_z=tab[:, T_FZ].copy(),
                   F_xt=tab[:, T_FXT].copy(), F_yt=tab[:, T_FYT].copy(),
                   F_xg=tab[:, T_FXG].copy(), F_yg=tab[:, T_FYG].copy(),
                   sliding_x=tab[:, T_SLIDE_X] > 0, sliding_y=tab[:, T_SLIDE_Y] > 0,
                   lifted=tab[:, T_LIFT] > 0)

    def _to_table(self):
        tab = np.zeros((4, N_TIRE_COLS))
        for col, arr in ((T_S, self.s), (T_ALPHA, self.alpha), (T_R, self.r_inst),
                         (T_FZ, self.F_z), (T_FXT, self.F_xt), (T_FYT, self.F_yt),
                         (T_FXG, self.F_xg), (T_FYG, self.F_yg)):
            tab[:, col] = arr
        return tab


def _wheel_geometry(params: VehicleParams, wheel: str):
    try:
        i = WHEELS.index(wheel)
    except ValueError:
        raise ValueError(f"wheel must be one of {WHEELS}, got {wheel!r}") from None
    front = i < 2
    half = 0.5 * (params.c_f if front else params.c_r)
    y_w = half if i % 2 == 0 else -half
    x_w = params.a if front else -params.b
    return x_w, y_w


def contact_patch_velocity(state: VehicleState, params: VehicleParams, wheel: str):
    """Longitudinal/lateral velocity of a tire contact patch in the body frame."""
    x_w, y_w = _wheel_geometry(params, wheel)
    return _patch_velocity(state.u, state.v, state.wz, y_w, x_w)


def compute_slips(u_g: float, v_g: float, omega_w: float, r_inst: float, delta: float):
    """Longitudinal slip ratio and slip angle (rad) of one tire.

    Both denominators are floored at ``EPS_V`` so the slips stay finite at
    low speed.
    """
    if not r_inst > 0:
        raise ValueError("r_inst must be positive")
    return _slips(float(u_g), float(v_g), float(omega_w), float(r_inst), float(delta))


def static_loads(params: VehicleParams) -> np.ndarray:
    out = np.empty(4)
    _vertical_loads(params.to_array(), 0.0, 0.0, 0.0, 0.0, out)
    return out


def vertical_loads(state: VehicleState, params: VehicleParams):
    """Quasi-static wheel loads (N) and a per-wheel lift flag.

    Loads are clamped at zero; ``lifted[i]`` is True where clamping
    happened.
    """
    out = np.empty(4)
    _vertical_loads(params.to_array(), state.phi, state.wx,
                    state.lagged_udot, state.lagged_vdot_term, out)
    return out, out == 0.0


def fiala_longitudinal(s: float, F_z: float, C_x: float, mu: float) -> float:
    """Fiala longitudinal force: linear up to the critical slip, then sliding."""
    return _fiala_long(float(s), float(F_z), float(C_x), float(mu))[0]


def fiala_lateral(alpha: float, F_z: float, C_y: float, mu: float) -> float:
    """Fiala lateral force (opposes the slip angle)."""
    return _fiala_lat(float(alpha), float(F_z), float(C_y), float(mu))[0]


def fiala_longitudinal_regime(s, F_z, C_x, mu) -> str:
    return "sliding" if _fiala_long(float(s), float(F_z), float(C_x), float(mu))[1] else "elastic"


def fiala_lateral_regime(alpha, F_z, C_y, mu) -> str:
    return "sliding" if _fiala_lat(float(alpha), float(F_z), float(C_y), float(mu))[1] else "elastic"


def tire_to_body(F_xt: float, F_yt: float, delta: float):
    return _rotate(float(F_xt), float(F_yt), float(delta))


def wheel_torques(throttle: float, braking: float, omega_w: float, F_z: float,
                  params: VehicleParams):
    """Drive, brake and rolling-resistance torques (N m) on one wheel."""
    tq_s, tq_t = params.torque_arrays()
    return _wheel_torques(float(throttle), float(braking), float(omega_w), float(F_z),
                          params.to_array(), tq_s, tq_t)


def tire_forces(state: VehicleState, controls: ControlSample, params: VehicleParams) -> TireOutput:
    tab = np.empty((4, N_TIRE_COLS))
    _tires(state.to_array(), controls.steering * params.max_steer_angle,
           params.to_array(), tab, np.empty(4))
    return TireOutput._from_table(tab)


def chassis_system(state: VehicleState, tires: TireOutput, params: VehicleParams):
    """Return (udot, A, rhs) where A @ (vdot, wzdot, wxdot) = rhs."""
    mat = np.empty((3, 3))
    rhs = np.empty(3)
    udot = _chassis_system(state.to_array(), tires._to_table(), params.to_array(), mat, rhs)
    return udot, mat, rhs


def chassis_accelerations(state: VehicleState, tires: TireOutput, params: VehicleParams):
    """Chassis accelerations (udot, vdot, wzdot, wxdot).

    The longitudinal equation is explicit; the lateral, yaw and roll
    equations are coupled and solved together.
    """
    udot, mat, rhs = chassis_system(state, tires, params)
    sol = np.empty(3)
    if not _solve3(mat, rhs, sol):
        raise np.linalg.LinAlgError("singular lateral/yaw/roll system")
    return udot, sol[0], sol[1], sol[2]


def step(state: VehicleState, controls: ControlSample, params: VehicleParams,
         dt: float, t: float | None = None) -> VehicleState:
    """Advance one half-implicit step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = state.to_array()
    tq_s, tq_t = params.torque_arrays()
    _, resid = _step(x, float(controls.throttle), float(controls.steering),
                     float(controls.braking), params.to_array(), tq_s, tq_t, float(dt),
                     _workspace())
    if resid < 0:
        raise np.linalg.LinAlgError("singular lateral/yaw/roll system")
    if not np.all(np.isfinite(x)):
        when = "" if t is None else f" at t={t:.6g} s"
        raise FloatingPointError(f"non-finite vehicle state{when}")
    return VehicleState.from_array(x)


class SimulationError(FloatingPointError):
    """Raised when the state becomes non-finite during a simulation."""

    def __init__(self, t):
        super().__init__(f"simulation diverged (non-finite state) at t={t:.6g} s")
        self.t = t


def _grid(t0, tf, dt, sample_dt):
    if not tf > t0:
        raise ValueError("tf must be greater than t0")
    if not dt > 0:
        raise ValueError("dt must be positive")
    every = int(round(sample_dt / dt))
    if every < 1 or abs(every * dt - sample_dt) > 1e-9 * max(sample_dt, 1.0):
        raise ValueError("sample_dt must be an integer multiple of dt")
    n_samples = int(round((tf - t0) / sample_dt))
    if abs(n_samples * sample_dt - (tf - t0)) > 1e-9 * max(tf - t0, 1.0):
        raise ValueError("tf - t0 must be an integer multiple of sample_dt")
    return every, n_samples, n_samples * every


def control_arrays(schedule, t0, dt, n_steps):
    """Controls evaluated at the start of each step."""
    t = t0 + dt * np.arange(n_steps)
    thr, steer, brk = schedule.eval_many(t)
    return (np.ascontiguousarray(thr, dtype=np.float64),
            np.ascontiguousarray(steer, dtype=np.float64),
            np.ascontiguousarray(brk, dtype=np.float64))


def simulate(params: VehicleParams, schedule, init: VehicleState, t0: float, tf: float,
             dt: float = 5e-3, sample_dt: float = 0.01, return_diagnostics: bool = False):
    """Run the model from ``t0`` to ``tf`` and sample all channels.

    Returns a :class:`~vdcalib.data.TimeSeries` with ``CHANNELS`` sampled
    every ``sample_dt`` (both endpoints included). With
    ``return_diagnostics`` a dict with wheel-lift count, the worst relative
    residual of the coupled chassis solve and the final state is returned
    as well.
    """
    from .data import TimeSeries

    every, n_samples, n_steps = _grid(t0, tf, dt, sample_dt)
    thr, steer, brk = control_arrays(schedule, t0, dt, n_steps)
    tq_s, tq_t = params.torque_arrays()
    out = np.empty((n_samples + 1, 12))
    diag = np.empty(3)
    xf = _run(init.to_array(), thr, steer, brk, params.to_array(), tq_s, tq_t,
              float(dt), every, out, diag)
    if diag[0] >= 0:
        raise SimulationError(t0 + diag[0] * dt)
    t = t0 + sample_dt * np.arange(n_samples + 1)
    ts = TimeSeries(t, {name: out[:, j] for j, name in enumerate(CHANNELS)},
                    meta={"sample_dt": sample_dt, "dt": dt, "source": "8dof simulation"})
    if return_diagnostics:
        return ts, {"wheel_lift_events": int(diag[1]), "max_solve_residual": float(diag[2]),
                    "final_state": VehicleState.from_array(xf)}
    return ts


def final_state(params, schedule, init, t0, tf, dt=5e-3) -> VehicleState:
    """State reached at ``tf`` (used to warm-start calibration windows)."""
    n_steps = int(round((tf - t0) / dt))
    if abs(n_steps * dt - (tf - t0)) > 1e-9:
        raise ValueError("tf - t0 must be an integer multiple of dt")
    thr, steer, brk = control_arrays(schedule, t0, dt, n_steps)
    tq_s, tq_t = params.torque_arrays()
    out = np.empty((2, 12))
    diag = np.empty(3)
    xf = _run(init.to_array(), thr, steer, brk, params.to_array(), tq_s, tq_t,
              float(dt), max(n_steps, 1), out, diag)
    if diag[0] >= 0:
        raise SimulationError(t0 + diag[0] * dt)
    return VehicleState.from_array(xf)


def warm_start(state: VehicleState) -> VehicleState:
    """Copy of ``state`` with the lagged accelerations reset to zero."""
    return replace(state, lagged_udot=0.0, lagged_vdot_term=0.0)
