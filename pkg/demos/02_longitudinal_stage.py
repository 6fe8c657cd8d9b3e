"""Calibrate the longitudinal tire stiffnesses from a throttle ramp.

Generates noisy synthetic data at the configured true parameters, runs
the SMC sampler on the first stage only and prints the posterior
summary next to the values used to generate the data. Pass a smaller
particle count for a quick look:

    python3 demos/02_longitudinal_stage.py 300
"""
import sys
import time

from vdcalib.config import RunConfig
from vdcalib.inference import run_stage_pipeline
from vdcalib.stages import stages_from_config

n_draws = int(sys.argv[1]) if len(sys.argv) > 1 else 1000

cfg = RunConfig.default()
kind, scfg = cfg.sampler(n_draws=n_draws, n_chains=4)
stage = stages_from_config(cfg, names=["longitudinal"])[0]
truth = cfg.truth_params()
noise = cfg.noise()

t = time.perf_counter()
res = run_stage_pipeline([stage], sampler=kind, config=scfg)["longitudinal"]
print(f"{scfg.n_chains} chains x {n_draws} particles in {time.perf_counter() - t:.0f} s")
print(f"tempering stages per chain: {[len(c.phi_history) - 1 for c in res['chains']]}")

print(f"{'parameter':14s} {'truth':>10s} {'mean':>10s} {'sd':>9s} {'94% HDI':>23s} {'r_hat':>7s}")
# noise parameter -> the injected sd of (the first) channel it describes
injected = {}
for ch, sig in stage.channels.items():
    injected.setdefault(sig, noise[ch])
for k, s in res["summary"].items():
    ref = getattr(truth, k, None) or injected[k]
    print(f"{k:14s} {ref:10.4g} {s.mean:10.4g} {s.sd:9.3g} "
          f"[{s.hdi_low:10.4g}, {s.hdi_high:10.4g}] {s.r_hat:7.4f}")
