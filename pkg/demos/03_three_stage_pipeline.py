"""Full staged calibration with posterior-predictive checks.

Runs longitudinal, lateral and coast-down stages in order (each later
stage inherits the posterior means of the earlier ones), then compares
the mean RMSE of 100 posterior and 100 prior responses per channel.
With the default 8 x 1000 particles this takes tens of minutes on one
core; pass a particle count to shorten it:

    python3 demos/03_three_stage_pipeline.py 300
"""
import sys
import time

from vdcalib.config import RunConfig
from vdcalib.diagnostics import posterior_predictive
from vdcalib.inference import run_stage_pipeline
from vdcalib.stages import stages_from_config

n_draws = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
cfg = RunConfig.default()
kind, scfg = cfg.sampler(n_draws=n_draws)
noise = cfg.noise()


def done(name, res):
    print(f"\n== {name} ({time.perf_counter() - t0:.0f} s)")
    if res["substituted"]:
        print("  inherited: " + ", ".join(f"{k}={v:.5g}" for k, v in res["substituted"].items()))
    for k, s in res["summary"].items():
        print(f"  {k:14s} mean {s.mean:<11.5g} sd {s.sd:<9.3g} "
              f"r_hat {s.r_hat:.4f} ess_bulk {s.ess_bulk:.0f}")


t0 = time.perf_counter()
results = run_stage_pipeline(stages_from_config(cfg), sampler=kind, config=scfg, on_stage=done,
                             meta=cfg.metadata())

print("\nmean RMSE of 100 responses (posterior vs prior), injected noise sd in brackets")
for name, res in results.items():
    post = posterior_predictive(res["chains"], res["stage"], n=100, seed=cfg.seed)
    prior = posterior_predictive([], res["stage"], n=100, seed=cfg.seed, source="prior")
    for ch in res["stage"].channels:
        print(f"  {name:12s} {ch:9s} {post.mean_rmse[ch]:9.4g} vs {prior.mean_rmse[ch]:9.4g} "
              f"[{noise[ch]}]")
