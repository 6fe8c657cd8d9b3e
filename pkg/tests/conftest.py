import numpy as np
import pytest

from vdcalib.config import RunConfig
from vdcalib.stages import build_stage


@pytest.fixture(scope="session")
def config():
    return RunConfig.default()


def short_stage(cfg, name="longitudinal", tf=None, noise_sigma=None, **plan_changes):
    """A configured stage cut to a short window so tests stay fast."""
    plan = cfg.stage_plan(name)
    plan["tf"] = tf if tf is not None else plan["t0"] + 1.0
    plan.update(plan_changes)
    return build_stage(plan, cfg.truth_params(), cfg.vehicle_params(), noise_sigma,
                       dt=cfg.dt, sample_dt=cfg.sample_dt, schedule=cfg.schedule(plan["maneuver"]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
