"""Synthetic calibration data and the default three-stage calibration setup."""
from __future__ import annotations

from . import driver
from .data import DEFAULT_NOISE, NoiseSpec, TimeSeries, add_gaussian_noise
from .dynamics import VehicleState, final_state, simulate, warm_start
from .inference import CalibrationStage, PriorSpec, Tied
from .params import VehicleParams

# Data-generating values of the calibrated parameters. b_phi_f and b_phi_r
# are each half of the total roll damping of 20000 N m s/rad.
TRUTH = {
    "C_xf": 25000.0, "C_xr": 28000.0,
    "C_yf": 50000.0, "C_yr": 50000.0,
    "k_phi_f": 40000.0, "k_phi_r": 40000.0,
    "b_phi_f": 10000.0, "b_phi_r": 10000.0,
    "rr": 0.0175,
}


def generate_stage_data(params: VehicleParams, schedule, start_speed: float, t0: float,
                        tf: float, noise: NoiseSpec | None = None, dt: float = 5e-3,
                        sample_dt: float = 0.01, channels=None):
    """Simulate a maneuver and cut out the calibration window ``[t0, tf]``.

    The vehicle starts at ``t = 0`` rolling straight at ``start_speed``.
    The state reached at ``t0`` (lagged accelerations cleared) becomes
    the warm-start state and the window is re-simulated from it, so the
    forward model evaluated at ``params`` reproduces the clean data
    exactly. Returns ``(series, warm_state)``; the warm state is also
    stored in ``series.meta["init_state"]``.
    """
    init = VehicleState.rolling(start_speed, params)
    warm = warm_start(final_state(params, schedule, init, 0.0, t0, dt)) if t0 > 0 else init
    clean = simulate(params, schedule, warm, t0, tf, dt=dt, sample_dt=sample_dt)
    if channels is not None:
        clean = clean.select(channels)
    clean.meta.update({"t0": t0, "start_speed": start_speed, "init_state": warm.to_dict(),
                       "maneuver": schedule.to_dict(), "source": "8dof synthetic data"})
    if noise is None:
        return clean, warm
    return add_gaussian_noise(clean, noise), warm


def untied_damping(priors: PriorSpec) -> PriorSpec:
    """Replace a tied roll-damping group by independent per-axle priors.

    Each tied parameter gets its own copy of the group variable's prior,
    the same range every other per-axle parameter is given.
    """
    out = {}
    for k, p in priors.priors.items():
        if isinstance(p, Tied):
            out[k] = priors.priors[p.group]
        elif any(isinstance(q, Tied) and q.group == k for q in priors.priors.values()):
            continue
        else:
            out[k] = p
    return PriorSpec(out)


def build_stage(plan: dict, truth_params: VehicleParams, nominal_params: VehicleParams,
                noise_sigma: dict | None = None, data: TimeSeries | None = None,
                dt: float = 5e-3, sample_dt: float = 0.01, schedule=None) -> CalibrationStage:
    """Create a CalibrationStage, generating its synthetic data if needed.

    ``noise_sigma=None`` uses the default noise levels; pass ``{}`` for
    clean data.
    """
    if schedule is None:
        schedule = driver.maneuver(plan["maneuver"], **plan.get("maneuver_args", {}))
    chans = list(plan["channels"])
    if data is None:
        sig = DEFAULT_NOISE if noise_sigma is None else noise_sigma
        noise = NoiseSpec({c: sig[c] for c in chans if c in sig}, seed=plan["noise_seed"])
        data, warm = generate_stage_data(truth_params, schedule, plan["start_speed"],
                                         plan["t0"], plan["tf"], noise, dt, sample_dt, chans)
    else:
        if "init_state" not in data.meta:
            raise ValueError(f"stage {plan['name']!r}: data file has no init_state metadata")
        warm = VehicleState.from_dict(data.meta["init_state"])
    return CalibrationStage(name=plan["name"], priors=plan["priors"], data=data,
                            channels=dict(plan["channels"]), schedule=schedule, init=warm,
                            t0=plan["t0"], base_params=nominal_params,
                            upstream=dict(plan.get("upstream", {})), dt=dt)


def stages_from_config(cfg, noise_sigma: dict | None = None, data: dict | None = None,
                       names=None) -> list:
    """Stages described by a RunConfig.

    ``data`` maps stage names to already loaded series; other stages get
    freshly generated synthetic data (``noise_sigma=None`` uses the
    config's noise block).
    """
    data = data or {}
    sig = cfg.noise() if noise_sigma is None else noise_sigma
    truth = cfg.truth_params()
    nominal = cfg.vehicle_params()
    out = []
    for name in names or cfg.stage_names():
        plan = cfg.stage_plan(name)
        out.append(build_stage(plan, truth, nominal, sig, data.get(name), cfg.dt, cfg.sample_dt,
                               schedule=cfg.schedule(plan["maneuver"])))
    return out


def default_stages(noise_sigma: dict | None = None) -> list:
    """The three default stages with synthetic data, from the shipped config."""
    from .config import RunConfig

    return stages_from_config(RunConfig.default(), noise_sigma)
