"""Convergence diagnostics, posterior summaries and predictive checks.

All multi-chain estimators take an array of shape ``(n_chains, n_draws)``.
R-hat and bulk ESS are computed on rank-normalised split chains; tail ESS
uses indicator functions at the 5% and 95% quantiles.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .data import TimeSeries, align


class DegenerateChainsWarning(UserWarning):
    pass


def _as_chains(chains, min_chains=1, min_draws=4) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("chains must be a (n_chains, n_draws) array")
    if x.shape[0] < min_chains:
        raise ValueError(f"need at least {min_chains} chains, got {x.shape[0]}")
    if x.shape[1] < min_draws:
        raise ValueError(f"need at least {min_draws} draws per chain, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("chains contain non-finite values")
    return x


def _is_constant(x) -> bool:
    return bool(np.ptp(x) == 0)


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    # an odd middle draw is dropped so both halves have equal length
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def rank_normalize(x: np.ndarray) -> np.ndarray:
    """Normal scores of the pooled ranks (average rank for ties)."""
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat_raw(x: np.ndarray) -> float:
    n = x.shape[1]
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(math.sqrt(var_hat / w))


def split_rhat(chains, rank_normalized: bool = True) -> float:
    """Split R-hat of one parameter, rank-normalised by default.

    Rank normalisation bounds the statistic (a single chain sitting far
    from the others gives about 1.3 with 8 chains); pass
    ``rank_normalized=False`` for the classic variant on raw draws.
    Constant chains give 1.0; check :func:`is_degenerate` for them.
    """
    x = _as_chains(chains, min_chains=2, min_draws=4)
    if _is_constant(x):
        return 1.0
    x = _split(x)
    return _rhat_raw(rank_normalize(x) if rank_normalized else x)


def _autocov_fft(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row (lag 0 .. n-1)."""
    n = x.shape[1]
    nfft = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(xc, n=nfft, axis=1)
    acov = np.fft.irfft(f * np.conjugate(f), n=nfft, axis=1)[:, :n]
    return acov / n


def _ess_raw(x: np.ndarray) -> float:
    m, n = x.shape
    if _is_constant(x):
        return math.nan
    acov = _autocov_fft(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer initial positive sequence: sum pairs until the first negative one
    total = 0.0
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        total += pair
        t += 2
    tau = -1.0 + 2.0 * total
    return float(m * n / tau)


def ess_bulk(chains) -> float:
    """Bulk effective sample size (rank-normalised split chains)."""
    x = _as_chains(chains)
    if _is_constant(x):
        return math.nan
    return _ess_raw(rank_normalize(_split(x)))


def ess_tail(chains) -> float:
    """Tail ESS: the smaller ESS of the 5% and 95% quantile indicators."""
    x = _as_chains(chains)
    if _is_constant(x):
        return math.nan
    out = []
    for q in (0.05, 0.95):
        ind = (x <= np.quantile(x, q)).astype(float)
        out.append(_ess_raw(_split(ind)))
    return float(min(out))


def ess_mean(chains) -> float:
    """ESS of the raw (not rank-normalised) split chains."""
    x = _as_chains(chains)
    return _ess_raw(_split(x))


def mcse(chains):
    """Monte Carlo standard errors of the posterior mean and sd.

    Returns ``(mcse_mean, mcse_sd)``; constant chains give ``(0, 0)``.
    """
    x = _as_chains(chains)
    if _is_constant(x):
        return 0.0, 0.0
    sd = x.std(ddof=1)
    ess_m = ess_bulk(x)
    mcse_mean = sd / math.sqrt(ess_m)
    dev2 = (x - x.mean()) ** 2
    ess_s = ess_mean(dev2) if not _is_constant(dev2) else ess_m
    m4 = np.mean(dev2 ** 2)
    var = np.mean(dev2)
    # delta method: var(s^2) ~ (m4 - s^4) / ess, d sd = d var / (2 sd)
    mcse_sd = math.sqrt(max(m4 - var ** 2, 0.0) / ess_s) / (2.0 * math.sqrt(var))
    return float(mcse_mean), float(mcse_sd)


HDI_MIN_SAMPLES = 50


def hdi(samples, mass: float = 0.94):
    """Narrowest interval containing ``ceil(mass * n)`` of the samples."""
    if not 0 < mass <= 1:
        raise ValueError("mass must be in (0, 1]")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size < HDI_MIN_SAMPLES:
        raise ValueError(f"hdi needs at least {HDI_MIN_SAMPLES} samples, got {x.size}")
    k = int(math.ceil(mass * x.size))
    k = min(max(k, 1), x.size)
    widths = x[k - 1:] - x[:x.size - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def is_degenerate(chains) -> bool:
    return _is_constant(_as_chains(chains, min_draws=1))


def ess_evolution(chains, n_points: int = 10, kind: str = "bulk"):
    """ESS over increasing draw prefixes; returns (prefix lengths, ess)."""
    x = _as_chains(chains)
    n = x.shape[1]
    sizes = np.unique(np.linspace(max(4, n // n_points), n, n_points).astype(int))
    fn = ess_bulk if kind == "bulk" else ess_tail
    return sizes * x.shape[0], np.array([fn(x[:, :s]) for s in sizes])


def linear_r2(x, y) -> float:
    """Coefficient of determination of a least-squares line through (x, y)."""
    res = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return float(res.rvalue ** 2)


@dataclass
class ParamSummary:
    name: str
    mean: float
    sd: float
    hdi_low: float
    hdi_high: float
    mcse_mean: float
    mcse_sd: float
    ess_bulk: float
    ess_tail: float
    r_hat: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}


def summarize_param(name, chains, hdi_mass: float = 0.94) -> ParamSummary:
    x = _as_chains(chains)
    deg = _is_constant(x)
    lo, hi = hdi(x, hdi_mass) if x.size >= HDI_MIN_SAMPLES else (math.nan, math.nan)
    m_mean, m_sd = mcse(x)
    return ParamSummary(
        name=name, mean=float(x.mean()), sd=float(x.std(ddof=1)) if x.size > 1 else 0.0,
        hdi_low=lo, hdi_high=hi, mcse_mean=m_mean, mcse_sd=m_sd,
        ess_bulk=ess_bulk(x), ess_tail=ess_tail(x),
        r_hat=split_rhat(x) if x.shape[0] >= 2 else math.nan, degenerate=deg)


def summarize(chains, hdi_mass: float = 0.94) -> dict:
    """Per-parameter summaries for a list of ChainDraws."""
    names = chains[0].names
    return {k: summarize_param(k, np.stack([c[k] for c in chains]), hdi_mass) for k in names}


@dataclass
class PredictiveResult:
    responses: list
    expectation: TimeSeries
    posterior_mean: TimeSeries
    mean_rmse: dict
    thetas: np.ndarray

    def series(self):
        """All n + 2 response series (draws, expectation, posterior mean)."""
        return [*self.responses, self.expectation, self.posterior_mean]


def _exact_mean(rows, axis=0):
    # mean of identical rows is returned bit-exactly
    rows = np.asarray(rows, dtype=float)
    first = np.take(rows, [0], axis=axis)
    return np.squeeze(first + np.mean(rows - first, axis=axis, keepdims=True), axis=axis)


def _mean_series(series) -> TimeSeries:
    names = series[0].names
    return TimeSeries(series[0].t, {k: _exact_mean([s[k] for s in series]) for k in names},
                      {"kind": "expectation"})


def posterior_predictive(draws, stage, n: int = 100, seed: int = 0,
                         source: str = "posterior") -> PredictiveResult:
    """Simulate the stage maneuver for ``n`` parameter vectors.

    With ``source="posterior"`` the vectors are resampled uniformly (with
    replacement) from the pooled ``draws``; with ``source="prior"`` they
    are drawn from the stage priors instead. ``mean_rmse`` is the average
    over the ``n`` responses of each channel's RMSE against the stage data.
    """
    rng = np.random.default_rng(seed)
    sampled = stage.priors.sampled
    if source == "posterior":
        if not draws:
            raise ValueError("posterior_predictive needs at least one chain of draws")
        names = draws[0].names
        pooled = np.vstack([c.draws for c in draws])[:, [names.index(k) for k in sampled]]
        if pooled.shape[0] == 0:
            raise ValueError("posterior_predictive needs non-empty draws")
        thetas = pooled[rng.integers(0, pooled.shape[0], n)]
        centre = _exact_mean(pooled)
    elif source == "prior":
        thetas = stage.priors.sample(rng, n)
        centre = stage.priors.means()
    else:
        raise ValueError("source must be 'posterior' or 'prior'")
    chans = list(stage.channels)
    responses = []
    errs = {c: [] for c in chans}
    for th in thetas:
        try:
            sim = stage.simulate(th)
        except FloatingPointError:
            continue
        sim = sim.select(chans)
        responses.append(sim)
        resid = align(sim, stage.data, chans)
        for c, r in zip(chans, resid):
            errs[c].append(float(np.sqrt(np.mean(r ** 2))))
    if not responses:
        raise FloatingPointError("every predictive simulation diverged")
    expectation = _mean_series(responses)
    pm = stage.simulate(centre).select(chans)
    return PredictiveResult(responses=responses, expectation=expectation, posterior_mean=pm,
                            mean_rmse={c: float(np.mean(v)) for c, v in errs.items()},
                            thetas=thetas)
