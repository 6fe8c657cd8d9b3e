"""Drive the 8-DOF model through the four standard maneuvers.

Prints a few headline numbers per maneuver and writes every channel to
``demo_out/<maneuver>.csv``. Run from the repository root:

    python3 demos/01_maneuvers.py
"""
from pathlib import Path

import numpy as np

from vdcalib.config import RunConfig
from vdcalib.data import write_csv
from vdcalib.dynamics import VehicleState, simulate

cfg = RunConfig.default()
params = cfg.truth_params()
out = Path("demo_out")
out.mkdir(exist_ok=True)

runs = {
    # maneuver: (start speed m/s, end time s)
    "longitudinal_ramp": (5.0, 10.0),
    "lateral_steer": (3.0, 10.7),
    "coastdown": (16.0, 12.0),
    "acceptance_test": (5.0, 11.5),
}

for name, (v0, tf) in runs.items():
    ts, diag = simulate(params, cfg.schedule(name), VehicleState.rolling(v0, params), 0.0, tf,
                        return_diagnostics=True)
    write_csv(ts, out / f"{name}.csv", meta={**cfg.metadata(), "maneuver": name})
    print(f"{name:18s} u: {ts['u'][0]:5.1f} -> {ts['u'][-1]:5.1f} m/s   "
          f"max |wz| {np.max(np.abs(ts['wz'])):.3f} rad/s   "
          f"max |phi| {np.degrees(np.max(np.abs(ts['phi']))):.2f} deg   "
          f"wheel lift steps {diag['wheel_lift_events']}")

print(f"channels written to {out}/")
