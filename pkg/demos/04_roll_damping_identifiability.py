"""Why front and rear roll damping are sampled as one variable.

The roll-rate equation only sees the sum of the two damping
coefficients, so with the axles sampled separately the posterior is a
long ridge along b_f + b_r = const. This script runs the lateral stage
twice, tied and untied, and reports the correlation and interval widths.
Upstream longitudinal stiffnesses are fixed at their true values.

    python3 demos/04_roll_damping_identifiability.py 500
"""
import sys

import numpy as np

from vdcalib.config import RunConfig
from vdcalib.diagnostics import hdi
from vdcalib.inference import pool, smc_sample
from vdcalib.stages import stages_from_config, untied_damping

n_draws = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
cfg = RunConfig.default()
_, scfg = cfg.sampler(n_draws=n_draws, n_chains=4)
truth = cfg.truth_params()

tied = stages_from_config(cfg, names=["lateral"])[0].with_fixed(
    {"C_xf": truth.C_xf, "C_xr": truth.C_xr})
untied = type(tied)(tied.name, untied_damping(tied.priors), tied.data, tied.channels,
                    tied.schedule, tied.init, tied.t0, tied.base_params, tied.fixed, {}, tied.dt)

tied_chains = smc_sample(tied, scfg)
b = pool(tied_chains, "b_phi")
lo, hi = hdi(b)
print(f"tied:   b_phi mean {b.mean():.0f}, 94% HDI [{lo:.0f}, {hi:.0f}] (width {hi - lo:.0f})")

untied_chains = smc_sample(untied, scfg)
bf, br = pool(untied_chains, "b_phi_f"), pool(untied_chains, "b_phi_r")
for name, x in (("b_phi_f", bf), ("b_phi_r", br)):
    lo, hi = hdi(x)
    print(f"untied: {name} mean {x.mean():.0f}, 94% HDI [{lo:.0f}, {hi:.0f}] (width {hi - lo:.0f})")
s = bf + br
print(f"untied: correlation {np.corrcoef(bf, br)[0, 1]:.3f}; sum mean {s.mean():.0f} sd {s.std():.0f}")
