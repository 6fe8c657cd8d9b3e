"""Priors, Gaussian likelihood and samplers for staged calibration.

Two samplers are provided:

* :func:`smc_sample` - Sequential Monte Carlo with adaptive tempering,
  systematic resampling and independent Metropolis-Hastings mutation
  using a Gaussian fitted to the particle cloud.
* :func:`mh_sample` - adaptive random-walk Metropolis-Hastings, mainly as
  a cross-check of the SMC posterior.

Both work against any *target* object exposing ``priors`` (a
:class:`PriorSpec`) and ``loglik_batch(thetas, need=None)``. When ``need``
is given, the target may return ``-inf`` for any row whose log-likelihood
is certainly below ``need[i]``; the samplers only pass thresholds below
which the proposal is rejected anyway, so this shortcut is exact.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from . import dynamics as dyn
from .data import TimeSeries, align
from .params import INDEX as PARAM_INDEX, SCALAR_FIELDS, VehicleParams, _POSITIVE

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class CalibrationError(RuntimeError):
    """Sampler cannot proceed (e.g. every particle has zero likelihood)."""


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"Uniform needs lo < hi, got ({self.lo}, {self.hi})")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def sample(self, rng, n):
        return rng.uniform(self.lo, self.hi, n)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def sd(self):
        return (self.hi - self.lo) / math.sqrt(12.0)


@dataclass(frozen=True)
class HalfNormal:
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"HalfNormal scale must be > 0, got {self.scale}")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            val = (math.log(2.0) - HALF_LOG_2PI - math.log(self.scale)
                   - 0.5 * (x / self.scale) ** 2)
        return np.where(x >= 0, val, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.erf(np.maximum(x, 0) / (self.scale * math.sqrt(2.0))), 0.0)

    def sample(self, rng, n):
        return np.abs(rng.normal(0.0, self.scale, n))

    @property
    def mean(self):
        return self.scale * math.sqrt(2.0 / math.pi)

    @property
    def sd(self):
        return self.scale * math.sqrt(1.0 - 2.0 / math.pi)


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Tied:
    """Parameter equal to ``weight`` times the sampled variable ``group``."""

    group: str
    weight: float = 1.0


_SAMPLED = (Uniform, HalfNormal)


def prior_from_dict(d: dict):
    kind = d.get("dist")
    args = {k: v for k, v in d.items() if k != "dist"}
    table = {"uniform": Uniform, "halfnormal": HalfNormal, "fixed": Fixed, "tied": Tied}
    if kind not in table:
        raise ValueError(f"unknown prior type {kind!r}; expected one of {sorted(table)}")
    return table[kind](**args)


def prior_to_dict(p) -> dict:
    name = {Uniform: "uniform", HalfNormal: "halfnormal", Fixed: "fixed", Tied: "tied"}[type(p)]
    return {"dist": name, **p.__dict__}


class PriorSpec:
    """Named priors; sampled variables come first, in insertion order.

    ``Fixed`` entries are constants and ``Tied`` entries are deterministic
    multiples of a sampled group variable; neither is part of the
    sampled vector ``theta``.
    """

    def __init__(self, priors: dict):
        self.priors = dict(priors)
        self.sampled = [k for k, p in self.priors.items() if isinstance(p, _SAMPLED)]
        self.tied = [k for k, p in self.priors.items() if isinstance(p, Tied)]
        self.fixed = {k: float(p.value) for k, p in self.priors.items() if isinstance(p, Fixed)}
        for k, p in self.priors.items():
            if not isinstance(p, (*_SAMPLED, Fixed, Tied)):
                raise TypeError(f"prior for {k!r} has unsupported type {type(p).__name__}")
            if isinstance(p, Tied) and p.group not in self.sampled:
                raise ValueError(f"{k!r} is tied to {p.group!r}, which is not a sampled variable")
        self._index = {k: i for i, k in enumerate(self.sampled)}

    def __repr__(self):
        return f"PriorSpec(sampled={self.sampled}, tied={self.tied}, fixed={list(self.fixed)})"

    def __len__(self):
        return len(self.sampled)

    @property
    def names(self):
        """Sampled names followed by tied names (the draw-matrix columns)."""
        return self.sampled + self.tied

    def sample(self, rng, n: int) -> np.ndarray:
        return np.column_stack([self.priors[k].sample(rng, n) for k in self.sampled])

    def logpdf_batch(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        out = np.zeros(thetas.shape[0])
        for j, k in enumerate(self.sampled):
            out += self.priors[k].logpdf(thetas[:, j])
        return out

    def as_vector(self, theta) -> np.ndarray:
        if isinstance(theta, dict):
            extra = set(theta) - set(self.sampled) - set(self.tied) - set(self.fixed)
            missing = set(self.sampled) - set(theta)
            if extra or missing:
                raise KeyError(f"theta names do not match priors (missing {sorted(missing)}, "
                               f"unexpected {sorted(extra)})")
            return np.array([theta[k] for k in self.sampled], dtype=float)
        vec = np.asarray(theta, dtype=float)
        if vec.shape != (len(self.sampled),):
            raise KeyError(f"theta has shape {vec.shape}, expected ({len(self.sampled)},)")
        return vec

    def expand(self, thetas) -> np.ndarray:
        """Append the tied columns to a matrix of sampled values."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        cols = [self.priors[k].weight * thetas[:, self._index[self.priors[k].group]]
                for k in self.tied]
        return np.column_stack([thetas, *cols]) if cols else thetas.copy()

    def means(self) -> np.ndarray:
        return np.array([self.priors[k].mean for k in self.sampled])

    def sds(self) -> np.ndarray:
        return np.array([self.priors[k].sd for k in self.sampled])

    def to_dict(self) -> dict:
        return {k: prior_to_dict(p) for k, p in self.priors.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls({k: prior_from_dict(v) for k, v in d.items()})


def log_prior(theta, priors: PriorSpec) -> float:
    """Sum of the per-parameter log prior densities (``-inf`` off support)."""
    return float(priors.logpdf_batch(priors.as_vector(theta)[None, :])[0])


# --------------------------------------------------------------------------
# targets
# --------------------------------------------------------------------------

class FunctionTarget:
    """Wrap a vectorised log-likelihood ``fn(thetas) -> (n,)`` as a target."""

    def __init__(self, priors: PriorSpec, fn, name: str = "target"):
        self.priors = priors
        self.fn = fn
        self.name = name

    def loglik_batch(self, thetas, need=None):
        return np.asarray(self.fn(np.atleast_2d(thetas)), dtype=float)


def sigma_name(channel: str) -> str:
    return f"sigma_{channel}"


@dataclass
class CalibrationStage:
    """One calibration stage: maneuver, data, priors and fixed values.

    Parameters
    ----------
    name : str
    priors : PriorSpec
        Priors over model parameters and noise levels. Keys are
        ``VehicleParams`` field names, noise names, or group variables
        referenced by ``Tied`` entries.
    data : TimeSeries
        Measurements whose time axis equals the simulation output grid
        from ``t0`` to ``data.t[-1]``.
    channels : dict
        Likelihood channel -> name of its noise standard deviation.
    schedule : ControlSchedule
    init : VehicleState
        Warm-start state at ``t0``.
    t0 : float
    base_params : VehicleParams
        Values of every parameter that is neither sampled nor fixed.
    fixed : dict
        Extra fixed values (model parameters or noise levels).
    upstream : dict
        Parameter -> earlier stage name; the pipeline replaces the value
        with that stage's posterior mean.
    """

    name: str
    priors: PriorSpec
    data: TimeSeries
    channels: dict
    schedule: object
    init: object
    t0: float
    base_params: VehicleParams = field(default_factory=VehicleParams)
    fixed: dict = field(default_factory=dict)
    upstream: dict = field(default_factory=dict)
    dt: float = 5e-3

    def __post_init__(self):
        known = set(SCALAR_FIELDS)
        for k in (*self.priors.sampled, *self.priors.tied, *self.priors.fixed):
            if k in known or k in self.channels.values():
                continue
            if any(isinstance(p, Tied) and p.group == k for p in self.priors.priors.values()):
                continue
            raise ValueError(f"stage {self.name!r}: prior {k!r} is neither a vehicle "
                             f"parameter, a noise level nor a tied group")
        for k in self.fixed:
            if k not in known and k not in self.channels.values():
                raise ValueError(f"stage {self.name!r}: unknown fixed value {k!r}")
            if k in self.priors.priors:
                raise ValueError(f"stage {self.name!r}: {k!r} is both fixed and in the priors")
        for ch, sname in self.channels.items():
            if ch not in dyn.CHANNELS:
                raise ValueError(f"stage {self.name!r}: unknown channel {ch!r}")
            if ch not in self.data:
                raise ValueError(f"stage {self.name!r}: data has no channel {ch!r}")
            n_src = (sname in self.priors.sampled) + (sname in self.fixed) + (sname in self.priors.fixed)
            if n_src != 1:
                raise ValueError(f"stage {self.name!r}: channel {ch!r} needs exactly one "
                                 f"noise level {sname!r} (sampled or fixed)")
        self._compiled = None

    # -- parameter assembly -------------------------------------------------
    @property
    def names(self):
        return self.priors.names

    @property
    def tf(self) -> float:
        return float(self.data.t[-1])

    def constants(self) -> dict:
        out = dict(self.priors.fixed)
        out.update(self.fixed)
        return out

    def with_fixed(self, values: dict) -> "CalibrationStage":
        """Copy of the stage with additional fixed values."""
        fixed = dict(self.fixed)
        fixed.update({k: float(v) for k, v in values.items()})
        return CalibrationStage(self.name, self.priors, self.data, self.channels, self.schedule,
                                self.init, self.t0, self.base_params, fixed, self.upstream, self.dt)

    def vehicle_params(self, theta) -> VehicleParams:
        """Vehicle parameters for one sampled vector (or dict)."""
        vec = self.priors.as_vector(theta)
        full = self.priors.expand(vec)[0]
        values = {k: v for k, v in self.constants().items() if k in PARAM_INDEX}
        for k, v in zip(self.priors.names, full):
            if k in PARAM_INDEX:
                values[k] = float(v)
        return self.base_params.replace(**values)

    def noise_levels(self, theta) -> dict:
        vec = self.priors.as_vector(theta)
        full = dict(zip(self.priors.names, self.priors.expand(vec)[0]))
        consts = self.constants()
        return {ch: float(full[s] if s in full else consts[s]) for ch, s in self.channels.items()}

    # -- likelihood ---------------------------------------------------------
    def _compile(self):
        if self._compiled is not None:
            return self._compiled
        sample_dt = self.data.sample_dt
        every, n_samples, n_steps = dyn._grid(self.t0, self.tf, self.dt, sample_dt)
        grid = self.t0 + sample_dt * np.arange(n_samples + 1)
        if len(self.data) != grid.size or np.max(np.abs(self.data.t - grid)) > 1e-9:
            raise ValueError(f"stage {self.name!r}: data time axis does not match the "
                             f"simulation grid starting at t0={self.t0}")
        thr, steer, brk = dyn.control_arrays(self.schedule, self.t0, self.dt, n_steps)
        tq_s, tq_t = self.base_params.torque_arrays()
        chans = list(self.channels)
        base = self.base_params.to_array()
        consts = self.constants()
        for k, v in consts.items():
            if k in PARAM_INDEX:
                base[PARAM_INDEX[k]] = v
        full_names = self.priors.names
        param_cols = [(j, PARAM_INDEX[k]) for j, k in enumerate(full_names) if k in PARAM_INDEX]
        sig_src = []
        for ch in chans:
            s = self.channels[ch]
            sig_src.append(("col", full_names.index(s)) if s in full_names else ("const", consts[s]))
        self._compiled = dict(
            every=every, n=grid.size, thr=thr, steer=steer, brk=brk, tq_s=tq_s, tq_t=tq_t,
            base=base, param_cols=param_cols, sig_src=sig_src,
            sel=np.array([dyn.CHANNELS.index(c) for c in chans], dtype=np.int64),
            data=np.ascontiguousarray(self.data.as_matrix(chans)),
            x0=self.init.to_array(),
            positive=np.array([PARAM_INDEX[k] for k in _POSITIVE]),
        )
        return self._compiled

    def loglik_batch(self, thetas, need=None) -> np.ndarray:
        """Log-likelihood of each row of ``thetas`` (sampled-variable order)."""
        c = self._compile()
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        full = self.priors.expand(thetas)
        n_part = full.shape[0]
        pmat = np.tile(c["base"], (n_part, 1))
        for j, col in c["param_cols"]:
            pmat[:, col] = full[:, j]
        sig = np.column_stack([full[:, v] if kind == "col" else np.full(n_part, v)
                               for kind, v in c["sig_src"]])
        ok = np.all(sig > 0, axis=1) & np.all(pmat[:, c["positive"]] > 0, axis=1)
        ok &= np.all(np.isfinite(pmat), axis=1)
        n = c["n"]
        out = np.full(n_part, -np.inf)
        if not np.any(ok):
            return out
        sig_ok = sig[ok]
        const = -n * np.log(sig_ok).sum(axis=1) - sig_ok.shape[1] * n * HALF_LOG_2PI
        wts = np.ascontiguousarray(0.5 / sig_ok ** 2)
        if need is None:
            limit = np.full(const.size, np.inf)
        else:
            limit = const - np.asarray(need, dtype=float)[ok]
            limit = np.where(np.isnan(limit), np.inf, limit)
        sse = np.zeros((const.size, c["sel"].size))
        status = np.zeros(const.size, dtype=np.int64)
        dyn._batch_sse(np.ascontiguousarray(pmat[ok]), c["x0"], c["thr"], c["steer"], c["brk"],
                       c["tq_s"], c["tq_t"], float(self.dt), c["every"], c["data"], c["sel"],
                       wts, limit, sse, status)
        ll = const - (wts * sse).sum(axis=1)
        diverged = status == 1
        if np.any(diverged):
            log.warning("stage %s: %d simulation(s) diverged; treated as zero likelihood",
                        self.name, int(diverged.sum()))
        ll[status != 0] = -np.inf
        out[ok] = ll
        return out

    def simulate(self, theta) -> TimeSeries:
        return dyn.simulate(self.vehicle_params(theta), self.schedule, self.init, self.t0,
                            self.tf, dt=self.dt, sample_dt=self.data.sample_dt)


def gaussian_loglik(residuals, sigma) -> float:
    """Sum over channels and samples of the Gaussian log-density of ``residuals``.

    ``residuals`` has shape (n_channels, n); ``sigma`` has one entry per
    channel.
    """
    r = np.atleast_2d(np.asarray(residuals, dtype=float))
    s = np.asarray(sigma, dtype=float).reshape(-1, 1)
    return float(np.sum(-0.5 * (r / s) ** 2 - np.log(s) - HALF_LOG_2PI))


def log_likelihood(theta, stage: CalibrationStage) -> float:
    """Gaussian log-likelihood of ``stage.data`` given one parameter vector.

    Runs the forward model and aligns it with the data; a diverging
    simulation yields ``-inf``.
    """
    try:
        model = stage.simulate(theta)
    except FloatingPointError as err:
        log.warning("stage %s: %s; treated as zero likelihood", stage.name, err)
        return -math.inf
    chans = list(stage.channels)
    sig = stage.noise_levels(theta)
    resid = align(model, stage.data, chans)
    return gaussian_loglik(resid, [sig[c] for c in chans])


# --------------------------------------------------------------------------
# chain output
# --------------------------------------------------------------------------

@dataclass
class ChainDraws:
    """Draws of one chain plus the sampler's bookkeeping."""

    chain_id: int
    seed: int
    names: list
    draws: np.ndarray
    loglik: np.ndarray
    phi_history: list = field(default_factory=list)
    acceptance: list = field(default_factory=list)
    sampler: str = "smc"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.draws = np.asarray(self.draws, dtype=float)
        self.loglik = np.asarray(self.loglik, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draw matrix must be (n_draws, n_params)")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draw matrix contains non-finite values")

    def __getitem__(self, name) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def metadata(self) -> dict:
        return {"chain_id": self.chain_id, "seed": self.seed, "sampler": self.sampler,
                "names": self.names, "phi_history": [float(p) for p in self.phi_history],
                "acceptance": [float(a) for a in self.acceptance], "info": self.info}

    def write(self, path) -> Path:
        """Write ``<path>`` (CSV) and ``<path>.json`` (metadata)."""
        path = Path(path)
        header = ",".join([*self.names, "log_likelihood"])
        mat = np.column_stack([self.draws, self.loglik])
        rows = [",".join(format(float(x), ".17g") for x in row) for row in mat]
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.metadata(), indent=2))
        return path

    @classmethod
    def read(cls, path) -> "ChainDraws":
        path = Path(path)
        lines = path.read_text().strip().splitlines()
        header = lines[0].split(",")
        if header[-1] != "log_likelihood":
            raise ValueError(f"{path}: last column must be log_likelihood")
        mat = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]], dtype=float)
        mat = mat.reshape(-1, len(header))
        side = path.with_suffix(path.suffix + ".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        return cls(chain_id=meta.get("chain_id", 0), seed=meta.get("seed", 0), names=header[:-1],
                   draws=mat[:, :-1], loglik=mat[:, -1], phi_history=meta.get("phi_history", []),
                   acceptance=meta.get("acceptance", []), sampler=meta.get("sampler", ""),
                   info=meta.get("info", {}))


def pool(chains, name=None) -> np.ndarray:
    """Stack draws of all chains (optionally a single column)."""
    mat = np.vstack([c.draws for c in chains])
    return mat if name is None else mat[:, chains[0].names.index(name)]


def draws_matrix(chains, name) -> np.ndarray:
    """(n_chains, n_draws) array of one parameter."""
    return np.stack([c[name] for c in chains])


def posterior_means(chains) -> dict:
    mat = pool(chains)
    return dict(zip(chains[0].names, mat.mean(axis=0)))


# --------------------------------------------------------------------------
# SMC
# --------------------------------------------------------------------------

@dataclass
class SMCConfig:
    n_chains: int = 8
    n_draws: int = 1000
    target_accept: float = 0.9
    ess_fraction: float = 0.5
    max_mh_steps: int = 25
    seed: int = 0


def relative_ess(logw) -> float:
    """(sum w)^2 / (n sum w^2) for unnormalised log-weights."""
    logw = np.asarray(logw, dtype=float)
    if not np.any(np.isfinite(logw)):
        return 0.0
    w = np.exp(logw - np.max(logw))
    return float(w.sum() ** 2 / (w.size * np.dot(w, w)))


def next_temperature(loglik, phi, ess_fraction, tol=1e-12) -> float:
    """Next tempering exponent: relative ESS of the increment weights = ess_fraction."""
    ll = np.where(np.isfinite(loglik), loglik, -np.inf)
    room = 1.0 - phi
    if relative_ess(room * ll) >= ess_fraction:
        return 1.0
    lo, hi = 0.0, room
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if relative_ess(mid * ll) >= ess_fraction:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(hi, 1e-300):
            break
    step = lo if lo > 0 else hi
    return min(phi + step, 1.0)


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - np.max(logw))
    return w / w.sum()


def systematic_resample(weights, rng) -> np.ndarray:
    """Indices drawn by systematic resampling (one uniform offset)."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, n - 1)


def fit_gaussian(x):
    """Mean, covariance and Cholesky factor of the rows of ``x``.

    Degenerate clouds fall back to a diagonal covariance with 1e-10 jitter.
    """
    x = np.atleast_2d(x)
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False)) if x.shape[0] > 1 else np.zeros((x.shape[1],) * 2)
    try:
        chol = np.linalg.cholesky(cov)
        if not np.all(np.isfinite(chol)) or np.min(np.diag(chol)) <= 0:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.diag(np.diag(cov)) + 1e-10 * np.eye(cov.shape[0])
        chol = np.linalg.cholesky(cov)
    return mean, cov, chol


def _mvn_logpdf(x, mean, chol):
    z = np.linalg.solve(chol, (x - mean).T).T
    return -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(np.diag(chol)))


def mh_steps_for(p_acc: float, cap: int) -> int:
    """Steps so that a particle moves at least once with probability 0.99."""
    if p_acc <= 0:
        return cap
    if p_acc >= 1:
        return 1
    return int(min(cap, max(1, math.ceil(math.log(1 - 0.99) / math.log(1 - p_acc)))))


def _smc_chain(target, cfg: SMCConfig, chain_id: int) -> ChainDraws:
    seed = cfg.seed + chain_id
    rng = np.random.default_rng(seed)
    priors = target.priors
    n = cfg.n_draws
    x = priors.sample(rng, n)
    lp = priors.logpdf_batch(x)
    ll = target.loglik_batch(x)
    if not np.any(np.isfinite(ll)):
        raise CalibrationError(
            f"{getattr(target, 'name', 'target')}: every prior draw has zero likelihood; "
            "widen the priors or check the warm-start state and data window")
    phi = 0.0
    history = [0.0]
    acceptance = []
    n_steps = cfg.max_mh_steps
    n_evals = n
    while phi < 1.0:
        new_phi = next_temperature(ll, phi, cfg.ess_fraction)
        logw = (new_phi - phi) * np.where(np.isfinite(ll), ll, -np.inf)
        phi = new_phi
        history.append(phi)
        idx = systematic_resample(normalize_log_weights(logw), rng)
        x, lp, ll = x[idx], lp[idx], ll[idx]
        mean, _, chol = fit_gaussian(x)
        accepted = 0
        for _ in range(n_steps):
            prop = mean + rng.standard_normal(x.shape) @ chol.T
            lq_prop = _mvn_logpdf(prop, mean, chol)
            lq_cur = _mvn_logpdf(x, mean, chol)
            lp_prop = priors.logpdf_batch(prop)
            logu = np.log(rng.random(n))
            # accept iff phi * ll_prop > phi * ll + logu - dlp - dlq
            need = ll + (logu - (lp_prop - lp) - (lq_cur - lq_prop)) / phi
            live = np.isfinite(lp_prop) & (need < np.inf)
            ll_prop = np.full(n, -np.inf)
            if np.any(live):
                ll_prop[live] = target.loglik_batch(prop[live], need=need[live])
                n_evals += int(live.sum())
            acc = live & np.isfinite(ll_prop) & (ll_prop > need)
            x[acc], lp[acc], ll[acc] = prop[acc], lp_prop[acc], ll_prop[acc]
            accepted += int(acc.sum())
        p_acc = accepted / (n * n_steps)
        acceptance.append(p_acc)
        n_steps = mh_steps_for(p_acc, cfg.max_mh_steps)
    return ChainDraws(chain_id=chain_id, seed=seed, names=priors.names, draws=priors.expand(x),
                      loglik=ll, phi_history=history, acceptance=acceptance, sampler="smc",
                      info={"n_likelihood_evals": n_evals, "target_accept": cfg.target_accept})


def smc_sample(target, config: SMCConfig | None = None, **overrides) -> list:
    """Run ``n_chains`` independent SMC chains; returns a list of ChainDraws."""
    cfg = config or SMCConfig()
    if overrides:
        cfg = SMCConfig(**{**cfg.__dict__, **overrides})
    if not 0 < cfg.ess_fraction < 1:
        raise ValueError("ess_fraction must be in (0, 1)")
    if cfg.n_draws < 2 or cfg.n_chains < 1:
        raise ValueError("need n_draws >= 2 and n_chains >= 1")
    return [_smc_chain(target, cfg, c) for c in range(cfg.n_chains)]


# --------------------------------------------------------------------------
# random-walk Metropolis-Hastings
# --------------------------------------------------------------------------

@dataclass
class MHConfig:
    n_chains: int = 8
    n_draws: int = 1000
    n_tune: int = 500
    target_accept: float = 0.9
    seed: int = 0


def mh_sample(target, config: MHConfig | None = None, **overrides) -> list:
    """Adaptive random-walk Metropolis-Hastings.

    All chains start at the prior mean and advance together (one batched
    likelihood call per iteration), each with its own generator seeded
    ``seed + chain_id``. During the first ``n_tune`` iterations the
    log proposal scale follows a Robbins-Monro recursion towards
    ``target_accept``. At a quarter, half and three quarters of tuning
    the proposal covariance is refitted to the latter half of the tuning
    draws of all chains pooled; a few hundred draws from one chain are
    too few to resolve strongly correlated posteriors. Tuning draws are
    discarded and the kernel is fixed afterwards.

    A high ``target_accept`` means short steps: at 0.9 a 9-parameter
    problem started at the prior mean may still be drifting after tuning.
    Values near 0.25 are the usual choice for random-walk proposals.
    """
    cfg = config or MHConfig()
    if overrides:
        cfg = MHConfig(**{**cfg.__dict__, **overrides})
    if not 0 < cfg.target_accept < 1:
        raise ValueError("target_accept must be in (0, 1)")
    priors = target.priors
    d = len(priors)
    k = cfg.n_chains
    rngs = [np.random.default_rng(cfg.seed + c) for c in range(k)]
    x = np.tile(priors.means(), (k, 1))
    lp = priors.logpdf_batch(x)
    ll = target.loglik_batch(x)
    if not np.any(np.isfinite(ll)):
        raise CalibrationError(
            f"{getattr(target, 'name', 'target')}: zero likelihood at the prior mean; "
            "widen the priors or check the warm-start state and data window")
    chol = np.stack([np.diag(priors.sds()) for _ in range(k)])
    log_scale = np.full(k, math.log(2.38 / math.sqrt(d)))
    total = cfg.n_tune + cfg.n_draws
    draws = np.empty((k, cfg.n_draws, d))
    lls = np.empty((k, cfg.n_draws))
    tune_hist = np.empty((k, cfg.n_tune, d))
    n_acc = np.zeros(k)
    n_acc_tune = np.zeros(k)
    # proposal covariance is re-estimated at these tuning iterations, each
    # time from the latter half of the tuning history so far
    cov_updates = {cfg.n_tune * q // 4 for q in (1, 2, 3)}
    last_update = 0
    for it in range(total):
        z = np.stack([r.standard_normal(d) for r in rngs])
        logu = np.log(np.array([r.random() for r in rngs]))
        prop = x + np.exp(log_scale)[:, None] * np.einsum("kij,kj->ki", chol, z)
        lp_prop = priors.logpdf_batch(prop)
        need = ll + logu - (lp_prop - lp)
        live = np.isfinite(lp_prop)
        ll_prop = np.full(k, -np.inf)
        if np.any(live):
            ll_prop[live] = target.loglik_batch(prop[live], need=need[live])
        acc = live & np.isfinite(ll_prop) & (ll_prop > need)
        x[acc], lp[acc], ll[acc] = prop[acc], lp_prop[acc], ll_prop[acc]
        if it < cfg.n_tune:
            tune_hist[:, it] = x
            n_acc_tune += acc
            gain = (it - last_update + 1) ** -0.6
            log_scale += gain * (acc.astype(float) - cfg.target_accept)
            n_hist = it + 1
            if n_hist in cov_updates and n_hist - n_hist // 2 >= 2 * d + 2:
                last_update = n_hist
                recent = tune_hist[:, n_hist // 2:n_hist].reshape(-1, d)
                if np.all(np.std(recent, axis=0) > 0):
                    chol[:] = fit_gaussian(recent)[2]
                    log_scale[:] = math.log(2.38 / math.sqrt(d))
        else:
            j = it - cfg.n_tune
            draws[:, j] = x
            lls[:, j] = ll
            n_acc += acc
    out = []
    for c in range(k):
        out.append(ChainDraws(
            chain_id=c, seed=cfg.seed + c, names=priors.names, draws=priors.expand(draws[c]),
            loglik=lls[c], phi_history=[1.0], sampler="mh",
            acceptance=[float(n_acc[c] / max(cfg.n_draws, 1))],
            info={"scale": float(np.exp(log_scale[c])), "n_tune": cfg.n_tune,
                  "tune_acceptance": float(n_acc_tune[c] / max(cfg.n_tune, 1)),
                  "target_accept": cfg.target_accept}))
    return out


# --------------------------------------------------------------------------
# staged pipeline
# --------------------------------------------------------------------------

def run_stage_pipeline(stages, sampler: str = "smc", config=None, out_dir=None,
                       on_stage=None, meta: dict | None = None) -> dict:
    """Run stages in order, feeding upstream posterior means forward.

    Returns ``{stage name: {"chains": [...], "stage": resolved stage,
    "means": {...}}}``. With ``out_dir`` the chains are written to
    ``out_dir/<stage>/chain_<k>.csv`` together with a ``summary.json``.
    """
    from .diagnostics import summarize

    results = {}
    for stage in stages:
        subs = {}
        for pname, src in stage.upstream.items():
            if src not in results:
                raise CalibrationError(f"stage {stage.name!r} needs the posterior of "
                                       f"{src!r}, which has not been run")
            means = results[src]["means"]
            if pname not in means:
                raise CalibrationError(f"stage {src!r} has no posterior for {pname!r}")
            subs[pname] = means[pname]
        resolved = stage.with_fixed(subs) if subs else stage
        if sampler == "smc":
            chains = smc_sample(resolved, config)
        elif sampler == "mh":
            chains = mh_sample(resolved, config)
        else:
            raise ValueError(f"unknown sampler {sampler!r}")
        for c in chains:
            c.info.update({"stage": stage.name, "fixed": {k: float(v) for k, v in subs.items()},
                           **(meta or {})})
        summary = summarize(chains)
        results[stage.name] = {"chains": chains, "stage": resolved,
                               "means": posterior_means(chains), "summary": summary,
                               "substituted": subs}
        if out_dir is not None:
            d = Path(out_dir) / stage.name
            d.mkdir(parents=True, exist_ok=True)
            for c in chains:
                c.write(d / f"chain_{c.chain_id}.csv")
            (d / "summary.json").write_text(json.dumps(
                {"stage": stage.name, "sampler": sampler, "substituted": subs, **(meta or {}),
                 "parameters": {k: v.to_dict() for k, v in summary.items()}}, indent=2))
        if on_stage is not None:
            on_stage(stage.name, results[stage.name])
    return results
