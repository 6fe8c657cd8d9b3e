import numpy as np
import pytest

from vdcalib.data import TimeSeries
from vdcalib.dynamics import VehicleState, simulate
from vdcalib.inference import PriorSpec, Tied, Uniform
from vdcalib.stages import build_stage, generate_stage_data, untied_damping


def test_warm_start_reproduces_clean_data(config):
    params = config.truth_params()
    sched = config.schedule("lateral_steer")
    data, warm = generate_stage_data(params, sched, 3.0, 7.0, 8.0, channels=["v", "wz"])
    again = simulate(params, sched, warm, 7.0, 8.0).select(["v", "wz"])
    assert again == data
    assert VehicleState.from_dict(data.meta["init_state"]) == warm
    assert warm.lagged_udot == 0.0 and warm.u > 15.0


def test_untied_damping_gives_each_axle_the_group_prior():
    pri = PriorSpec({"b_phi": Uniform(100.0, 30000.0), "b_phi_f": Tied("b_phi", 0.5),
                     "b_phi_r": Tied("b_phi", 0.5), "C_yf": Uniform(1.0, 2.0)})
    out = untied_damping(pri)
    assert out.sampled == ["b_phi_f", "b_phi_r", "C_yf"]
    assert out.priors["b_phi_f"] == out.priors["b_phi_r"] == Uniform(100.0, 30000.0)
    assert not out.tied


def test_loaded_data_needs_init_state(config):
    plan = config.stage_plan("coastdown")
    data = TimeSeries(5.6 + 0.01 * np.arange(11), {"u": np.ones(11)})
    with pytest.raises(ValueError, match="init_state"):
        build_stage(plan, config.truth_params(), config.vehicle_params(), data=data)


def test_stage_data_window_and_noise(config):
    plan = config.stage_plan("longitudinal")
    stage = build_stage(plan, config.truth_params(), config.vehicle_params())
    assert stage.data.t[0] == pytest.approx(1.0) and stage.data.t[-1] == pytest.approx(10.0)
    assert len(stage.data) == 901
    assert stage.data.meta["noise_seed"] == plan["noise_seed"]
