"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
sampler error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .data import DataFormatError, TimeSeries, read_csv, write_csv
from .inference import CalibrationError, ChainDraws, run_stage_pipeline

log = logging.getLogger("vdcalib")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

RHAT_MAX = 1.01
ESS_MIN = 400.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    return RunConfig.load(args.config)


def _set_threads(n):
    if n:
        import numba
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _stage_data_path(cfg: RunConfig, name: str, data_dir=None) -> Path:
    plan = cfg.stage_plan(name)
    if data_dir is not None:
        return Path(data_dir) / f"{name}.csv"
    return Path(plan["data"])


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .dynamics import VehicleState, simulate

    cfg = _load_config(args)
    name = args.maneuver
    test = cfg.raw.get("test") or {}
    start = args.start_speed if args.start_speed is not None else float(test.get("start_speed", 5.0))
    tf = args.tf if args.tf is not None else (float(test.get("tf", 11.5)) if name == test.get("maneuver")
                                              else 10.0)
    params = cfg.truth_params() if args.truth else cfg.vehicle_params()
    schedule = cfg.schedule(name)
    init = VehicleState.rolling(start, params)
    ts = simulate(params, schedule, init, 0.0, tf, dt=args.dt or cfg.dt, sample_dt=cfg.sample_dt)
    write_csv(ts, args.out, meta={**cfg.metadata(), "maneuver": schedule.to_dict(),
                                  "start_speed": start, "params": "truth" if args.truth else "vehicle"})
    print(f"wrote {args.out} ({len(ts)} samples, {len(ts.names)} channels)")
    return EXIT_OK


# -- generate-data -------------------------------------------------------------

def cmd_generate_data(args) -> int:
    from .data import NoiseSpec
    from .stages import generate_stage_data

    cfg = _load_config(args)
    names = args.stage or cfg.stage_names()
    sigma = {} if args.zero_noise else cfg.noise()
    for name in names:
        plan = cfg.stage_plan(name)
        chans = list(plan["channels"])
        seed = args.seed if args.seed is not None else plan["noise_seed"]
        noise = NoiseSpec({c: sigma[c] for c in chans if c in sigma}, seed=seed)
        series, _ = generate_stage_data(cfg.truth_params(), cfg.schedule(plan["maneuver"]),
                                        plan["start_speed"], plan["t0"], plan["tf"], noise,
                                        cfg.dt, cfg.sample_dt, chans)
        series.meta.setdefault("noise_seed", seed)
        path = _stage_data_path(cfg, name, args.out_dir)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(series, path, meta={**cfg.metadata(), "stage": name})
        print(f"wrote {path}")
    return EXIT_OK


# -- calibrate ---------------------------------------------------------------

def diagnostics_report(results) -> dict:
    """Pass/fail of R-hat and ESS thresholds for every stage and parameter."""
    report = {"thresholds": {"r_hat_max": RHAT_MAX, "ess_min": ESS_MIN}, "stages": {}, "pass": True}
    for name, res in results.items():
        rows = {}
        for k, s in res["summary"].items():
            ok = (s.r_hat is not None and s.r_hat < RHAT_MAX
                  and s.ess_bulk > ESS_MIN and s.ess_tail > ESS_MIN)
            rows[k] = {"r_hat": s.r_hat, "ess_bulk": s.ess_bulk, "ess_tail": s.ess_tail,
                       "pass": bool(ok)}
            report["pass"] &= bool(ok)
        report["stages"][name] = rows
    return report


def cmd_calibrate(args) -> int:
    from .stages import stages_from_config

    cfg = _load_config(args)
    _set_threads(args.threads)
    kind, scfg = cfg.sampler(args.sampler, n_draws=args.draws, n_chains=args.chains,
                             seed=args.seed)
    names = args.stage or cfg.stage_names()
    data = {}
    for name in names:
        path = _stage_data_path(cfg, name, args.data_dir)
        if not path.exists():
            raise ConfigError(f"data file for stage {name!r} not found: {path} "
                              "(run `vdcalib generate-data` first)")
        data[name] = read_csv(path)
    stages = stages_from_config(cfg, data=data, names=names)
    out = Path(args.out_dir) if args.out_dir else cfg.output_dir

    def progress(name, res):
        print(f"stage {name}: done")
        for k, s in res["summary"].items():
            print(f"  {k:16s} mean={s.mean:<12.6g} sd={s.sd:<10.4g} r_hat={s.r_hat:.4f} "
                  f"ess_bulk={s.ess_bulk:.0f}")

    results = run_stage_pipeline(stages, sampler=kind, config=scfg, out_dir=out,
                                 on_stage=progress, meta={**cfg.metadata(), "seed": scfg.seed})
    report = diagnostics_report(results)
    report.update({**cfg.metadata(), "seed": scfg.seed})
    report["sampler"] = {"kind": kind, **scfg.__dict__}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    print(f"diagnostics {'PASS' if report['pass'] else 'FAIL'}; report in {out / 'report.json'}")
    return EXIT_OK


# -- diagnose ----------------------------------------------------------------

def _read_chains(paths):
    chains = []
    for p in paths:
        try:
            chains.append(ChainDraws.read(p))
        except (OSError, ValueError) as err:
            raise DataFormatError(f"{p}: cannot read chain file ({err})") from None
    names = chains[0].names
    for p, c in zip(paths, chains):
        if c.names != names:
            raise DataFormatError(f"{p}: parameter columns differ from {paths[0]}")
    return chains


def cmd_diagnose(args) -> int:
    from .diagnostics import summarize

    chains = _read_chains(args.chains)
    summary = summarize(chains, hdi_mass=args.hdi_mass)
    doc = {"n_chains": len(chains), "n_draws": chains[0].n_draws,
           "config_hash": chains[0].info.get("config_hash"),
           "seeds": [c.seed for c in chains],
           "parameters": {k: v.to_dict() for k, v in summary.items()},
           "pass": all(v.r_hat is not None and v.r_hat < RHAT_MAX for v in summary.values())}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


# -- posterior-predict --------------------------------------------------------

def cmd_posterior_predict(args) -> int:
    from .diagnostics import posterior_predictive
    from .stages import stages_from_config

    cfg = _load_config(args)
    chains = _read_chains(args.chains)
    name = args.stage or chains[0].info.get("stage")
    if not name:
        raise UsageError("--stage is required (chain files do not record their stage)")
    path = _stage_data_path(cfg, name, args.data_dir)
    if not path.exists():
        raise ConfigError(f"data file for stage {name!r} not found: {path}")
    stage = stages_from_config(cfg, data={name: read_csv(path)}, names=[name])[0]
    fixed = chains[0].info.get("fixed") or {}
    if fixed:
        stage = stage.with_fixed(fixed)
    res = posterior_predictive(chains, stage, n=args.n, seed=args.seed,
                               source="prior" if args.prior else "posterior")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {**cfg.metadata(), "predict_seed": args.seed, "stage": name, "n": args.n,
            "source": "prior" if args.prior else "posterior"}
    for ch in stage.channels:
        cols = {f"draw_{i:03d}": r[ch] for i, r in enumerate(res.responses)}
        cols["expectation"] = res.expectation[ch]
        cols["posterior_mean"] = res.posterior_mean[ch]
        write_csv(TimeSeries(res.expectation.t, cols), out / f"{ch}.csv", meta=meta)
    (out / "rmse.json").write_text(json.dumps({**meta, "mean_rmse": res.mean_rmse}, indent=2))
    for ch, v in res.mean_rmse.items():
        print(f"{ch:10s} mean RMSE {v:.6g}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vdcalib", description="8-DOF vehicle simulation and Bayesian calibration")
    p.add_argument("--version", action="version", version=f"vdcalib {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="YAML run configuration (default: shipped file)")
        return sp

    sp = with_config(sub.add_parser("simulate", help="simulate a maneuver and write all channels"))
    sp.add_argument("--maneuver", default="acceptance_test")
    sp.add_argument("--start-speed", type=float)
    sp.add_argument("--tf", type=float, help="end time, s")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--truth", action="store_true", help="use the data-generating parameters")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("generate-data", help="write noisy synthetic stage data"))
    sp.add_argument("--stage", action="append", help="stage name (repeatable; default all)")
    sp.add_argument("--seed", type=int, help="noise seed (default: per-stage seed from config)")
    sp.add_argument("--zero-noise", action="store_true")
    sp.add_argument("--out-dir", help="write <stage>.csv here instead of the configured paths")
    sp.set_defaults(func=cmd_generate_data)

    sp = with_config(sub.add_parser("calibrate", help="run the staged calibration"))
    sp.add_argument("--sampler", choices=("smc", "mh"))
    sp.add_argument("--draws", type=int, help="draws per chain")
    sp.add_argument("--chains", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int, help="cap on worker threads")
    sp.add_argument("--stage", action="append", help="stage name (repeatable; default all)")
    sp.add_argument("--data-dir", help="read <stage>.csv from here")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("diagnose", help="convergence summary of chain files")
    sp.add_argument("chains", nargs="+")
    sp.add_argument("--hdi-mass", type=float, default=0.94)
    sp.add_argument("-o", "--out")
    sp.set_defaults(func=cmd_diagnose)

    sp = with_config(sub.add_parser("posterior-predict", help="posterior (or prior) responses"))
    sp.add_argument("chains", nargs="+")
    sp.add_argument("--stage")
    sp.add_argument("-n", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--prior", action="store_true", help="sample the prior instead")
    sp.add_argument("--data-dir")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_posterior_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (CalibrationError, DataFormatError, FloatingPointError, ValueError, OSError,
            np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
